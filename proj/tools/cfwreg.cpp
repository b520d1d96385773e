// cfwreg: synthetic data, training, registration, evaluation and gradient
// checks for the cascaded feature warping registration network.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a check failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfw/dataset.hpp"
#include "cfw/gradcheck_suite.hpp"
#include "cfw/network.hpp"
#include "cfw/parallel.hpp"
#include "cfw/reg_ops.hpp"
#include "cfw/run_config.hpp"
#include "cfw/training.hpp"
#include "cfw/volume_io.hpp"

namespace fs = std::filesystem;
using namespace cfw;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckFailed = 3;

void write_text(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
}

Shape parse_dims(const std::string &text) {
    const auto v = parse_int_list("dims", text);
    if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "--dims must be D,H,W, got '" + text + "'");
    return {v[0], v[1], v[2]};
}

TensorF read_image(const std::string &path) {
    TensorF t = read_volume(path).to_tensor(path);
    if (t.dim(0) != 1) {
        throw Error(ErrorCode::ShapeMismatch, path + ": expected a 1-channel intensity volume, got " + shape_str(t.shape()));
    }
    return t;
}

void check_dims(const CascadeNetwork<float> &net, const Shape &dims, const std::string &what) {
    net.validate_image(TensorF::zeros({1, dims[0], dims[1], dims[2]}), what.c_str());
}

// ---- synth

struct SynthArgs {
    std::string out;
    int pairs = 1;
    std::string dims = "32,32,32";
    int labels = 4;
    double max_disp = 2.0;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs &a) {
    SynthDatasetSpec spec;
    spec.dims = parse_dims(a.dims);
    spec.pairs = a.pairs;
    spec.labels = a.labels;
    spec.max_displacement = a.max_disp;
    spec.seed = a.seed;
    // Everything is generated before the directory is touched.
    const SynthDataset data = generate_dataset(spec);
    write_dataset(a.out, data);
    std::printf("wrote %d pairs to %s\n", a.pairs, a.out.c_str());
    return 0;
}

// ---- train

struct TrainArgs {
    std::string data;
    std::string config;
    long steps = 300;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_train(const TrainArgs &a) {
    const RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    cfg.validate();
    if (a.steps < 0) throw Error(ErrorCode::InvalidArgument, "--steps must be >= 0");
    const Manifest manifest = read_manifest(a.data);
    const auto pairs = load_training_pairs(a.data, manifest);

    InitOptions init;
    init.seed = a.seed;
    CascadeNetwork<float> net = CascadeNetwork<float>::initialize(cfg.network, init);
    check_dims(net, manifest.dims, a.data + " volumes");

    const std::string log_path = a.out + ".log.jsonl";
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw Error(ErrorCode::Io, "cannot write '" + log_path + "'");

    nlohmann::ordered_json header;
    header["event"] = "start";
    header["lambda"] = cfg.loss.lambda;
    header["learning_rate"] = cfg.adam.lr;
    header["search_range"] = cfg.network.search_range;
    header["levels"] = cfg.network.levels;
    header["nlcc_windows"] = cfg.loss.windows_for(cfg.network.levels);
    header["ablation"] = to_string(cfg.network.ablation);
    header["steps"] = a.steps;
    header["seed"] = a.seed;
    header["pairs"] = pairs.size();
    header["parameters"] = net.parameter_count();
    const std::string header_line = header.dump();
    log << header_line << '\n';
    std::printf("%s\n", header_line.c_str());

    TrainOptions opt;
    opt.steps = a.steps;
    opt.seed = derive_seed(a.seed, 1);
    opt.adam = cfg.adam;
    opt.checkpoint_every = cfg.checkpoint_every;
    opt.on_record = [&](const TrainRecord &r) {
        log << r.to_json() << '\n';
        if (r.step % 50 == 0 || r.step + 1 == a.steps) {
            std::printf("step %ld total %.6f (%.0f ms)\n", r.step, r.total, r.millis);
            std::fflush(stdout);
        }
    };
    opt.on_checkpoint = [&](long, const CascadeNetwork<float> &n) { save_checkpoint(n, a.out); };

    try {
        train(net, pairs, cfg.loss, opt);
    } catch (const NonFiniteLossError &e) {
        nlohmann::ordered_json j;
        j["event"] = "non_finite";
        j["step"] = e.step();
        log << j.dump() << '\n';
        throw;
    }
    std::printf("checkpoint %s\n", a.out.c_str());
    return 0;
}

// ---- register

struct RegisterArgs {
    std::string moving, fixed, ckpt, out_field, out_warped, dump_slices;
};

std::vector<float> mid_axial(const TensorF &t, std::int64_t channel) {
    const std::int64_t d = t.dim(1), h = t.dim(2), w = t.dim(3);
    const auto data = t.data();
    const std::int64_t off = (channel * d + d / 2) * h * w;
    return std::vector<float>(data.begin() + off, data.begin() + off + h * w);
}

void dump_slices(const std::string &dir, const TensorF &moving, const TensorF &fixed, const MultiScaleField<float> &fields) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory '" + dir + "'");
    const int levels = static_cast<int>(fields.levels.size());
    const auto pm = image_pyramid(moving, levels);
    const auto pf = image_pyramid(fixed, levels);
    const char *axis[3] = {"d", "h", "w"};
    for (int i = 0; i < levels; ++i) {
        const std::string base = (fs::path(dir) / ("level" + std::to_string(i + 1) + "_")).string();
        const TensorF &phi = fields.levels[i].tensor();
        const auto &fd = phi.shape();
        const TensorF warped = warp(pm[i], fields.levels[i]);
        write_pgm(base + "moving.pgm", fd[2], fd[3], mid_axial(pm[i], 0), 0.0f, 1.0f);
        write_pgm(base + "fixed.pgm", fd[2], fd[3], mid_axial(pf[i], 0), 0.0f, 1.0f);
        write_pgm(base + "warped.pgm", fd[2], fd[3], mid_axial(warped, 0), 0.0f, 1.0f);
        // Displacement components in voxels of that level, mid grey = 0.
        float range = 1e-3f;
        for (float v : phi.data()) range = std::max(range, std::abs(v));
        for (int c = 0; c < 3; ++c) {
            write_pgm(base + "field_" + axis[c] + ".pgm", fd[2], fd[3], mid_axial(phi, c), -range, range);
        }
    }
}

int cmd_register(const RegisterArgs &a) {
    const TensorF moving = read_image(a.moving);
    const TensorF fixed = read_image(a.fixed);
    if (moving.shape() != fixed.shape()) {
        throw Error(ErrorCode::ShapeMismatch, "moving " + shape_str(moving.shape()) + " and fixed " +
                                                  shape_str(fixed.shape()) + " differ in shape");
    }
    const CascadeNetwork<float> net = load_checkpoint(a.ckpt);
    net.validate_image(moving, "moving");

    NoGradGuard no_grad;
    const MultiScaleField<float> fields = net.forward(moving, fixed);
    const TensorF warped = warp(moving, fields.finest());
    write_volume(a.out_field, VolumeFile::from_tensor(fields.finest().tensor()));
    write_volume(a.out_warped, VolumeFile::from_tensor(warped));
    if (!a.dump_slices.empty()) dump_slices(a.dump_slices, moving, fixed, fields);

    const int w1 = LossConfig{}.windows_for(net.config().levels)[0];
    std::printf("nlcc moving-vs-fixed %.6f warped-vs-fixed %.6f\n", nlcc(moving, fixed, w1).item(),
                nlcc(warped, fixed, w1).item());
    return 0;
}

// ---- eval

struct EvalArgs {
    std::string data, ckpt, report;
};

int cmd_eval(const EvalArgs &a) {
    const Manifest manifest = read_manifest(a.data);
    const CascadeNetwork<float> net = load_checkpoint(a.ckpt);
    check_dims(net, manifest.dims, a.data + " volumes");
    const auto pairs = load_eval_pairs(a.data, manifest);
    const EvalReport report = evaluate(net, pairs, manifest.label_set());
    write_text(a.report, report.to_text());
    std::printf("pairs %zu identity_mean %.6f model_mean %.6f\n", pairs.size(), report.identity_mean,
                report.model_mean);
    return 0;
}

// ---- gradcheck

struct GradcheckArgs {
    std::uint64_t seed = 0;
    std::string op;
};

int cmd_gradcheck(const GradcheckArgs &a) {
    const auto entries = run_gradcheck_suite(a.seed, a.op);
    std::map<std::string, double> worst;
    std::vector<std::string> order;
    bool ok = true;
    for (const auto &e : entries) {
        std::printf("%-18s %-40s %.3e %s", e.op.c_str(), e.target.c_str(), e.result.max_rel_error,
                    e.passed() ? "ok" : "FAIL");
        if (e.result.refined > 0) {
            std::printf("  (%lld/%lld elements needed a retry step)", static_cast<long long>(e.result.refined),
                        static_cast<long long>(e.result.checked));
        }
        std::printf("\n");
        if (!worst.count(e.op)) order.push_back(e.op);
        worst[e.op] = std::max(worst[e.op], e.result.max_rel_error);
        ok = ok && e.passed();
    }
    std::printf("\nper-op max relative error (tolerance %.0e)\n", kGradcheckTolerance);
    for (const auto &op : order) std::printf("%-18s %.3e\n", op.c_str(), worst[op]);
    std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
    return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"cascaded feature warping registration"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (1 = deterministic single-threaded mode)")
        ->check(CLI::PositiveNumber);

    SynthArgs synth;
    auto *s = app.add_subcommand("synth", "generate synthetic labeled pairs with known deformations");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--pairs", synth.pairs, "number of pairs");
    s->add_option("--dims", synth.dims, "volume size D,H,W");
    s->add_option("--labels", synth.labels, "number of foreground labels");
    s->add_option("--max-disp", synth.max_disp, "max control-point displacement in voxels");
    s->add_option("--seed", synth.seed, "random seed");

    TrainArgs tr;
    auto *t = app.add_subcommand("train", "train on a synthetic dataset");
    t->add_option("--data", tr.data, "dataset directory")->required();
    t->add_option("--config", tr.config, "key=value config file (defaults if omitted)");
    t->add_option("--steps", tr.steps, "training steps");
    t->add_option("--seed", tr.seed, "random seed");
    t->add_option("--out", tr.out, "checkpoint path")->required();

    RegisterArgs rg;
    auto *r = app.add_subcommand("register", "register one pair with a trained checkpoint");
    r->add_option("--moving", rg.moving, "moving volume")->required();
    r->add_option("--fixed", rg.fixed, "fixed volume")->required();
    r->add_option("--ckpt", rg.ckpt, "checkpoint")->required();
    r->add_option("--out-field", rg.out_field, "output displacement field")->required();
    r->add_option("--out-warped", rg.out_warped, "output warped moving volume")->required();
    r->add_option("--dump-slices", rg.dump_slices, "directory for per-level PGM slices");

    EvalArgs ev;
    auto *e = app.add_subcommand("eval", "Dice evaluation on a synthetic dataset");
    e->add_option("--data", ev.data, "dataset directory")->required();
    e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
    e->add_option("--report", ev.report, "report path")->required();

    GradcheckArgs gc;
    auto *g = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    g->add_option("--seed", gc.seed, "random seed");
    g->add_option("--op", gc.op, "restrict to one op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    set_num_threads(threads);
    try {
        if (s->parsed()) return cmd_synth(synth);
        if (t->parsed()) return cmd_train(tr);
        if (r->parsed()) return cmd_register(rg);
        if (e->parsed()) return cmd_eval(ev);
        if (g->parsed()) return cmd_gradcheck(gc);
    } catch (const Error &err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kExitError;
    } catch (const std::exception &err) {
        std::fprintf(stderr, "error: internal: %s\n", err.what());
        return kExitError;
    }
    return kExitUsage;
}
