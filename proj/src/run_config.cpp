#include "cfw/run_config.hpp"

#include <fstream>
#include <sstream>

namespace cfw {

void RunConfig::validate() const {
    network.validate();
    loss.validate(network.levels);
    if (!(adam.lr > 0.0)) throw Error(ErrorCode::Config, "learning_rate must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw Error(ErrorCode::Config, "Adam betas must be in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw Error(ErrorCode::Config, "adam_epsilon must be > 0");
    if (checkpoint_every < 0) throw Error(ErrorCode::Config, "checkpoint_every must be >= 0");
}

KeyValues RunConfig::to_key_values() const {
    KeyValues kv = network.to_key_values();
    kv["lambda"] = format_double(loss.lambda);
    kv["nlcc_windows"] = format_int_list(loss.windows_for(network.levels));
    kv["learning_rate"] = format_double(adam.lr);
    kv["beta1"] = format_double(adam.beta1);
    kv["beta2"] = format_double(adam.beta2);
    kv["adam_epsilon"] = format_double(adam.epsilon);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

RunConfig parse_run_config(std::string_view text) {
    KeyValues kv = parse_key_values(text);
    RunConfig cfg;
    NetworkConfig::apply_key_values(cfg.network, kv);
    auto take = [&kv](const char *key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    if (auto v = take("lambda")) cfg.loss.lambda = parse_double("lambda", *v);
    if (auto v = take("nlcc_windows")) cfg.loss.nlcc_windows = parse_int_list("nlcc_windows", *v);
    if (auto v = take("learning_rate")) cfg.adam.lr = parse_double("learning_rate", *v);
    if (auto v = take("beta1")) cfg.adam.beta1 = parse_double("beta1", *v);
    if (auto v = take("beta2")) cfg.adam.beta2 = parse_double("beta2", *v);
    if (auto v = take("adam_epsilon")) cfg.adam.epsilon = parse_double("adam_epsilon", *v);
    if (auto v = take("checkpoint_every")) cfg.checkpoint_every = parse_int("checkpoint_every", *v);
    if (!kv.empty()) throw Error(ErrorCode::Config, "unknown config key '" + kv.begin()->first + "'");
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const Error &e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

}  // namespace cfw
