#pragma once

#include <string>
#include <string_view>

#include "cfw/network.hpp"
#include "cfw/training.hpp"

namespace cfw {

// Everything a training run is configured by, as one key-value document.
// Every key is optional; unknown keys are rejected.
struct RunConfig {
    NetworkConfig network;
    LossConfig loss;
    AdamOptions adam;
    long checkpoint_every = 100;

    void validate() const;
    KeyValues to_key_values() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string &path);

}  // namespace cfw
