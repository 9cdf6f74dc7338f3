#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sspnet/metrics.hpp"
#include "sspnet/model.hpp"

namespace sspnet {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-4;
    int search_epochs = 5;               // AFSS search phase length
    ple::Variant variant = ple::Variant::R;
    int m_off = 3;
    double sparse_ratio = 0.75;
    uint64_t seed = 0;
    int feature_dim = 256;               // D
    int pyramid_channels = 64;           // C
    double tau = 0.5;
    Arch arch = Arch::Sspnet;
    afss::Mode afss_mode = afss::Mode::Group;
    std::vector<int> stage_widths{16, 32, 48, 64};

    void validate() const;
    ModelConfig model_config() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Applies a "key=value" override with type checking; unknown keys throw
// UsageError naming the key.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

struct Checkpoint {
    TrainConfig config;
    AttributeSchema schema;
    afss::ScaleSelectionState selection;
    heads::ImbalanceWeights pos_rates;
    int epoch = 0;
    std::vector<nlohmann::json> history;  // one JSON record per epoch
    std::vector<std::pair<std::string, Tensor>> params;
};

using SnapshotHook = std::function<void(const Checkpoint&)>;

// Two-phase training: epochs 1..search_epochs train all per-level branches
// in parallel and record per-epoch validation mA per (unit, level); the
// selection is then frozen and the remaining epochs train the chosen
// branches only. Returns the best-validation-mA parameters. The snapshot
// hook, when set, receives the pre-freeze state at the end of the search.
Checkpoint train(const TrainConfig& config, const Dataset& train_split, const Dataset& val_split,
                 std::ostream* log_stream = nullptr, const SnapshotHook& on_search_end = {});

SspModel model_from_checkpoint(const Checkpoint& ckpt);

MetricReport evaluate(const Checkpoint& ckpt, const Dataset& test_split);

// Sigmoid probabilities of the checkpointed model on a dataset, (N, M).
Tensor predict(const Checkpoint& ckpt, const Dataset& ds);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sspnet
