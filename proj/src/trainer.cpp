#include "sspnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sspnet/checkpoint_io.hpp"

namespace sspnet {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ValidationError("config: learning_rate must be > 0");
    if (search_epochs < 1) throw ValidationError("config: search_epochs must be >= 1");
    if (search_epochs >= epochs)
        throw ValidationError("config: search_epochs must be smaller than epochs");
    if (m_off < 1) throw ValidationError("config: m_off must be >= 1");
    if (!(sparse_ratio > 0.0 && sparse_ratio <= 1.0))
        throw ValidationError("config: sparse_ratio must be in (0,1]");
    if (feature_dim < 1) throw ValidationError("config: feature_dim must be >= 1");
    if (pyramid_channels < 1) throw ValidationError("config: pyramid_channels must be >= 1");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("config: tau must be in [0,1]");
    if (stage_widths.size() != 4) throw ValidationError("config: stage_widths needs 4 entries");
    for (int w : stage_widths)
        if (w < 1) throw ValidationError("config: stage widths must be positive");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.backbone.in_channels = 3;
    mc.backbone.stage_widths = stage_widths;
    mc.backbone.pyramid_channels = pyramid_channels;
    mc.feature_dim = feature_dim;
    mc.variant = variant;
    mc.m_off = m_off;
    mc.sparse_ratio = sparse_ratio;
    mc.arch = arch;
    mc.afss_mode = afss_mode;
    return mc;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["search_epochs"] = cfg.search_epochs;
    j["variant"] = ple::variant_name(cfg.variant);
    j["m_off"] = cfg.m_off;
    j["sparse_ratio"] = cfg.sparse_ratio;
    j["seed"] = cfg.seed;
    j["feature_dim"] = cfg.feature_dim;
    j["pyramid_channels"] = cfg.pyramid_channels;
    j["tau"] = cfg.tau;
    j["arch"] = arch_name(cfg.arch);
    j["afss_mode"] = cfg.afss_mode == afss::Mode::Group ? "group" : "attribute";
    j["stage_widths"] = cfg.stage_widths;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.search_epochs = j.value("search_epochs", cfg.search_epochs);
    if (j.contains("variant")) cfg.variant = ple::variant_from_name(j.at("variant").get<std::string>());
    cfg.m_off = j.value("m_off", cfg.m_off);
    cfg.sparse_ratio = j.value("sparse_ratio", cfg.sparse_ratio);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.pyramid_channels = j.value("pyramid_channels", cfg.pyramid_channels);
    cfg.tau = j.value("tau", cfg.tau);
    if (j.contains("arch")) cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    if (j.contains("afss_mode")) {
        const std::string m = j.at("afss_mode").get<std::string>();
        if (m == "group")
            cfg.afss_mode = afss::Mode::Group;
        else if (m == "attribute")
            cfg.afss_mode = afss::Mode::Attribute;
        else
            throw ValidationError("config: afss_mode must be 'group' or 'attribute'");
    }
    if (j.contains("stage_widths")) cfg.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    cfg.validate();
    return cfg;
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "epochs")
            cfg.epochs = std::stoi(value);
        else if (key == "batch_size")
            cfg.batch_size = std::stoi(value);
        else if (key == "learning_rate")
            cfg.learning_rate = std::stod(value);
        else if (key == "search_epochs")
            cfg.search_epochs = std::stoi(value);
        else if (key == "variant")
            cfg.variant = ple::variant_from_name(value);
        else if (key == "m_off")
            cfg.m_off = std::stoi(value);
        else if (key == "sparse_ratio")
            cfg.sparse_ratio = std::stod(value);
        else if (key == "seed")
            cfg.seed = std::stoull(value);
        else if (key == "feature_dim")
            cfg.feature_dim = std::stoi(value);
        else if (key == "pyramid_channels")
            cfg.pyramid_channels = std::stoi(value);
        else if (key == "tau")
            cfg.tau = std::stod(value);
        else if (key == "arch")
            cfg.arch = arch_from_name(value);
        else if (key == "afss_mode") {
            if (value == "group")
                cfg.afss_mode = afss::Mode::Group;
            else if (value == "attribute")
                cfg.afss_mode = afss::Mode::Attribute;
            else
                throw UsageError("override afss_mode: expected 'group' or 'attribute'");
        } else if (key == "stage_widths") {
            std::vector<int> widths;
            std::stringstream ss(value);
            std::string tok;
            while (std::getline(ss, tok, ',')) widths.push_back(std::stoi(tok));
            cfg.stage_widths = widths;
        } else {
            throw UsageError("unknown config key '" + key + "'");
        }
    } catch (const UsageError&) {
        throw;
    } catch (const ValidationError& e) {
        throw UsageError(std::string("override ") + key + ": " + e.what());
    } catch (const std::exception&) {
        throw UsageError("override " + key + ": cannot parse value '" + value + "'");
    }
}

namespace {

// Adam with bias correction; moment buffers are keyed by parameter name so
// they survive branch pruning at the freeze boundary.
class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(const std::vector<std::pair<std::string, ad::Value>>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const auto& [name, p] : params) {
            if (!p->grad.same_shape(p->val)) continue;  // no gradient this step
            auto& st = state_[name];
            if (!st.m.same_shape(p->val)) {
                st.m = Tensor(p->val.shape());
                st.v = Tensor(p->val.shape());
            }
            const int64_t n = p->val.numel();
            for (int64_t i = 0; i < n; ++i) {
                const double g = p->grad[i];
                st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
                st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
                p->val[i] -= lr_ * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps_);
            }
        }
    }

private:
    struct Moments {
        Tensor m, v;
    };
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

void check_schema_compat(const AttributeSchema& a, const AttributeSchema& b, const char* what) {
    if (a.attributes != b.attributes)
        throw SchemaMismatchError(std::string(what) + ": attribute lists differ (" +
                                  std::to_string(a.attributes.size()) + " vs " +
                                  std::to_string(b.attributes.size()) + " attributes)");
    if (a.input_height != b.input_height || a.input_width != b.input_width)
        throw SchemaMismatchError(std::string(what) + ": input sizes differ");
}

void require_keypoints(const Dataset& ds, const char* what) {
    for (size_t i = 0; i < ds.samples.size(); ++i)
        if (!ds.samples[i].keypoints)
            throw MissingPriorError(std::string("PLE-K requested but ") + what + " sample " +
                                    std::to_string(i) +
                                    " has no keypoints (use PLE-R or PLE-S)");
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const SspModel& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, p] : model.parameters()) out.emplace_back(name, p->val);
    return out;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const SspModel& model,
                           const heads::ImbalanceWeights& weights, int epoch,
                           std::vector<json> history,
                           std::vector<std::pair<std::string, Tensor>> params) {
    Checkpoint ck;
    ck.config = cfg;
    ck.schema = model.schema;
    ck.selection = model.selection;
    ck.pos_rates = weights;
    ck.epoch = epoch;
    ck.history = std::move(history);
    ck.params = std::move(params);
    return ck;
}

double unit_mA(const MeanAccuracyResult& res, const std::vector<int>& attrs) {
    double acc = 0.0;
    int used = 0;
    for (int a : attrs) {
        if (res.excluded[static_cast<size_t>(a)]) continue;
        acc += res.per_attribute[static_cast<size_t>(a)];
        ++used;
    }
    return used > 0 ? acc / used : 0.5;  // no evaluable attribute: chance level
}

}  // namespace

Checkpoint train(const TrainConfig& config, const Dataset& train_split, const Dataset& val_split,
                 std::ostream* log_stream, const SnapshotHook& on_search_end) {
    config.validate();
    check_schema_compat(train_split.schema, val_split.schema, "train/val");
    if (train_split.samples.empty()) throw ValidationError("train: empty training split");
    if (val_split.samples.empty()) throw ValidationError("train: empty validation split");
    if (config.variant == ple::Variant::K && config.arch == Arch::Sspnet) {
        require_keypoints(train_split, "training");
        require_keypoints(val_split, "validation");
    }

    SspModel model = SspModel::init(config.model_config(), train_split.schema, config.seed);
    const heads::ImbalanceWeights weights = heads::compute_pos_rates(train_split);
    Adam adam(config.learning_rate);

    const int n = train_split.size();
    const Tensor val_labels = dataset_labels(val_split);
    std::vector<json> history;
    double best_mA = -1.0;
    std::vector<std::pair<std::string, Tensor>> best_params;
    int best_epoch = -1;
    std::map<std::string, Level> frozen_snapshot;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.arch == Arch::Sspnet && epoch == config.search_epochs + 1) {
            if (on_search_end)
                on_search_end(make_checkpoint(config, model, weights, epoch - 1, history,
                                              snapshot_params(model)));
            afss::freeze(model.selection);
            model.prune_to_selection();
            frozen_snapshot = model.selection.frozen;
        }
        const bool search_phase = config.arch == Arch::Sspnet && !model.selection.is_frozen;

        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(Rng::mix(config.seed, 0x5EED0000ULL + static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

        double loss_sum = 0.0;
        std::map<std::string, double> group_sums;
        int steps = 0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int end = std::min(n, start + config.batch_size);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            const Batch batch = make_batch(train_split, idx);
            const auto pyramid = extract_pyramid(batch.images, model.backbone);
            LossBreakdown bd;
            const auto loss = build_loss(model, pyramid, batch, weights, &bd);
            ad::backward(loss);
            adam.step(model.parameters());
            if (model.selection.is_frozen && model.selection.frozen != frozen_snapshot)
                throw StateError("freeze monotonicity violated: selection changed after freeze");
            loss_sum += bd.total;
            for (const auto& [g, v] : bd.per_group) group_sums[g] += v;
            ++steps;
        }

        json log;
        log["epoch"] = epoch;
        log["phase"] = search_phase ? "search" : "main";
        log["total_loss"] = loss_sum / steps;
        json gl = json::object();
        for (const auto& [g, v] : group_sums) gl[g] = v / steps;
        log["group_losses"] = gl;

        const SspModel eval_model = model.detached();
        if (search_phase) {
            const int nv = val_split.size();
            std::array<Tensor, 3> level_probs;
            for (Level l : kLevels)
                level_probs[static_cast<size_t>(l)] =
                    Tensor({nv, model.schema.num_attributes()});
            for (int start = 0; start < nv; start += config.batch_size) {
                const int end = std::min(nv, start + config.batch_size);
                std::vector<int> idx(static_cast<size_t>(end - start));
                for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
                const Batch batch = make_batch(val_split, idx);
                const auto pyramid = extract_pyramid(batch.images, eval_model.backbone);
                const auto logits = search_level_logits(eval_model, pyramid, batch);
                for (Level l : kLevels) {
                    const auto pred = heads::make_prediction(logits[static_cast<size_t>(l)]->val);
                    for (int i = 0; i < end - start; ++i)
                        for (int j = 0; j < model.schema.num_attributes(); ++j)
                            level_probs[static_cast<size_t>(l)].at(start + i, j) =
                                pred.probs.at(i, j);
                }
            }
            json val_json = json::object();
            for (Level l : kLevels) {
                const auto res = mean_accuracy(level_probs[static_cast<size_t>(l)], val_labels);
                if (config.afss_mode == afss::Mode::Group) {
                    for (const auto& g : model.schema.groups) {
                        const double v = unit_mA(res, g.attribute_indices);
                        afss::record_round(model.selection, g.name, l, v);
                        val_json[g.name][level_name(l)] = v;
                    }
                } else {
                    for (int a = 0; a < model.schema.num_attributes(); ++a) {
                        const double v = unit_mA(res, {a});
                        afss::record_round(model.selection,
                                           model.schema.attributes[static_cast<size_t>(a)], l, v);
                        val_json[model.schema.attributes[static_cast<size_t>(a)]][level_name(l)] =
                            v;
                    }
                }
            }
            log["val_mA"] = val_json;
        } else {
            const Tensor probs = predict_probs(eval_model, val_split, config.batch_size);
            const auto res = mean_accuracy(probs, val_labels);
            log["val_mA_overall"] = res.mA;
            json per_group = json::object();
            for (const auto& g : model.schema.groups)
                per_group[g.name] = unit_mA(res, g.attribute_indices);
            log["val_mA_groups"] = per_group;
            if (res.mA > best_mA) {
                best_mA = res.mA;
                best_params = snapshot_params(model);
                best_epoch = epoch;
                log["best"] = true;
            }
        }
        history.push_back(log);
        if (log_stream) *log_stream << log.dump() << "\n" << std::flush;
    }

    auto params = best_params.empty() ? snapshot_params(model) : std::move(best_params);
    json summary;
    summary["best_val_mA"] = best_mA;
    summary["best_epoch"] = best_epoch;
    history.push_back(summary);
    return make_checkpoint(config, model, weights, config.epochs, std::move(history),
                           std::move(params));
}

SspModel model_from_checkpoint(const Checkpoint& ckpt) {
    SspModel model = SspModel::init(ckpt.config.model_config(), ckpt.schema, ckpt.config.seed);
    model.selection = ckpt.selection;
    if (model.cfg.arch == Arch::Sspnet && model.selection.is_frozen) model.prune_to_selection();
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : ckpt.params) stored[name] = &t;
    auto params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw IntegrityError("checkpoint: parameter count mismatch (" +
                             std::to_string(ckpt.params.size()) + " stored, " +
                             std::to_string(params.size()) + " expected)");
    for (auto& [name, p] : params) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw IntegrityError("checkpoint: missing parameter " + name);
        if (!(it->second->shape() == p->val.shape()))
            throw IntegrityError("checkpoint: shape mismatch for " + name);
        p->val = *it->second;
    }
    return model;
}

MetricReport evaluate(const Checkpoint& ckpt, const Dataset& test_split) {
    check_schema_compat(ckpt.schema, test_split.schema, "checkpoint/test");
    const SspModel model = model_from_checkpoint(ckpt);
    const Tensor probs = predict_probs(model, test_split, ckpt.config.batch_size);
    const Tensor labels = dataset_labels(test_split);
    MetricReport report;
    report.ma = mean_accuracy(probs, labels);
    report.example = example_based(probs, labels);
    report.attribute_names = test_split.schema.attributes;
    return report;
}

Tensor predict(const Checkpoint& ckpt, const Dataset& ds) {
    check_schema_compat(ckpt.schema, ds.schema, "checkpoint/dataset");
    const SspModel model = model_from_checkpoint(ckpt);
    return predict_probs(model, ds, ckpt.config.batch_size);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    BlobFile blob;
    blob.header["artifact"] = "sspnet";
    blob.header["kind"] = "checkpoint";
    blob.header["config"] = train_config_to_json(ckpt.config);
    blob.header["schema"] = schema_to_json(ckpt.schema);
    blob.header["selection"] = afss::state_to_json(ckpt.selection);
    blob.header["pos_rates"] = ckpt.pos_rates.r;
    blob.header["epoch"] = ckpt.epoch;
    blob.header["history"] = ckpt.history;
    blob.arrays = ckpt.params;
    write_blob_file(blob, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const BlobFile blob = read_blob_file(path);
    Checkpoint ck;
    try {
        ck.config = train_config_from_json(blob.header.at("config"));
        ck.schema = schema_from_json(blob.header.at("schema"));
        ck.selection = afss::state_from_json(blob.header.at("selection"));
        ck.pos_rates.r = blob.header.at("pos_rates").get<std::vector<double>>();
        ck.epoch = blob.header.at("epoch").get<int>();
        for (const auto& h : blob.header.at("history")) ck.history.push_back(h);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
    ck.params = blob.arrays;
    return ck;
}

}  // namespace sspnet
