#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sspnet/checkpoint_io.hpp"
#include "sspnet/localization.hpp"
#include "sspnet/metrics.hpp"
#include "sspnet/synthetic.hpp"
#include "sspnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sspnet;

namespace {

json read_json_file(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw IoError(std::string("cannot open ") + what + ": " + path.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw UsageError(std::string(what) + " '" + path.string() + "': " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;  // key=value
    std::string variant;
    int64_t seed = -1;
};

void apply_cli_overrides(TrainConfig& cfg, const CommonArgs& args) {
    if (!args.variant.empty()) cfg.variant = ple::variant_from_name(args.variant);
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw UsageError("--set expects key=value, got '" + kv + "'");
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    try {
        cfg.validate();
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
}

const std::set<std::string> kTrainFileKeys{
    "schema",        "train_manifest", "val_manifest",      "epochs",
    "batch_size",    "learning_rate",  "search_epochs",     "variant",
    "m_off",         "sparse_ratio",   "seed",              "feature_dim",
    "pyramid_channels", "tau",         "arch",              "afss_mode",
    "stage_widths"};

int cmd_train(const CommonArgs& args) {
    const fs::path cfg_path(args.config_path);
    const json file = read_json_file(cfg_path, "train config");
    for (const auto& [key, value] : file.items()) {
        (void)value;
        if (!kTrainFileKeys.count(key))
            throw UsageError("train config: unknown key '" + key + "'");
    }
    for (const char* key : {"schema", "train_manifest", "val_manifest"})
        if (!file.contains(key))
            throw UsageError(std::string("train config: missing key '") + key + "'");

    TrainConfig cfg;
    try {
        cfg = train_config_from_json(file);
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
    apply_cli_overrides(cfg, args);

    const auto base = cfg_path.parent_path();
    const AttributeSchema schema = load_schema(base / file.at("schema").get<std::string>());
    const Dataset train_split =
        load_manifest(base / file.at("train_manifest").get<std::string>(), schema, "train");
    const Dataset val_split =
        load_manifest(base / file.at("val_manifest").get<std::string>(), schema, "val");

    const fs::path out(args.out_dir);
    fs::create_directories(out);
    json resolved = train_config_to_json(cfg);
    resolved["schema"] = fs::absolute(base / file.at("schema").get<std::string>()).string();
    resolved["train_manifest"] =
        fs::absolute(base / file.at("train_manifest").get<std::string>()).string();
    resolved["val_manifest"] =
        fs::absolute(base / file.at("val_manifest").get<std::string>()).string();
    write_text_file(out / "resolved_config.json", resolved.dump(2) + "\n");

    std::ofstream log(out / "train_log.jsonl");
    if (!log) throw IoError("cannot write " + (out / "train_log.jsonl").string());
    SnapshotHook hook;
    if (cfg.arch == Arch::Sspnet)
        hook = [&](const Checkpoint& snapshot) {
            save_checkpoint(snapshot, out / "search_snapshot.ckpt");
        };
    const Checkpoint ckpt = train(cfg, train_split, val_split, &log, hook);
    save_checkpoint(ckpt, out / "checkpoint.ckpt");
    std::cout << "checkpoint written to " << (out / "checkpoint.ckpt").string() << "\n";
    if (ckpt.selection.is_frozen) {
        std::cout << "frozen scale selection:";
        for (const auto& [unit, level] : ckpt.selection.frozen)
            std::cout << " " << unit << "->" << level_name(level);
        std::cout << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest, const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Dataset test = load_manifest(manifest, ckpt.schema, "test");
    const MetricReport report = evaluate(ckpt, test);
    const fs::path out(out_dir);
    fs::create_directories(out);
    json j = metric_report_to_json(report);
    j["config"] = train_config_to_json(ckpt.config);
    write_text_file(out / "report.json", j.dump(2) + "\n");
    std::cout << render_metric_table(report);
    return 0;
}

int cmd_cross_eval(const std::string& ckpt_path, const std::string& manifest,
                   const std::string& target_schema_path, const std::string& map_path,
                   const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    AttributeSchema target_schema = load_schema(target_schema_path);
    // The source model dictates the input resolution.
    target_schema.input_height = ckpt.schema.input_height;
    target_schema.input_width = ckpt.schema.input_width;
    const Dataset target = load_manifest(manifest, target_schema, "test");

    const json map_json = read_json_file(map_path, "attribute map");
    std::vector<std::pair<int, int>> attr_map;
    std::vector<std::string> row_names;
    for (const auto& [src_name, tgt_name] : map_json.items()) {
        const int sj = ckpt.schema.attribute_index(src_name);
        if (sj < 0) throw UsageError("attribute map: unknown source attribute '" + src_name + "'");
        const int tj = target_schema.attribute_index(tgt_name.get<std::string>());
        if (tj < 0)
            throw UsageError("attribute map: unknown target attribute '" +
                             tgt_name.get<std::string>() + "'");
        attr_map.emplace_back(sj, tj);
        row_names.push_back(src_name);
    }
    if (attr_map.empty()) throw UsageError("attribute map: empty mapping");

    const SspModel model = model_from_checkpoint(ckpt);
    std::vector<const Sample*> samples;
    for (const auto& s : target.samples) samples.push_back(&s);
    Dataset shim;  // images already at the model input size; labels unused
    shim.schema = ckpt.schema;
    shim.samples.reserve(samples.size());
    for (const Sample* s : samples) {
        Sample copy;
        copy.image = s->image;
        copy.labels.assign(static_cast<size_t>(ckpt.schema.num_attributes()), 0);
        copy.keypoints = s->keypoints;
        shim.samples.push_back(std::move(copy));
    }
    const Tensor probs = predict_probs(model, shim, ckpt.config.batch_size);
    const Tensor labels = dataset_labels(target);
    const CrossEvalResult res = cross_dataset_eval(probs, labels, attr_map);

    std::ostringstream table;
    table << std::left;
    table.setf(std::ios::fixed);
    table.precision(4);
    table << std::setw(22) << "Attribute" << std::setw(12) << "mA" << "\n";
    for (size_t i = 0; i < row_names.size(); ++i) {
        table << std::setw(22) << row_names[i];
        if (res.excluded[i])
            table << std::setw(12) << "n/a";
        else
            table << std::setw(12) << res.per_attribute_mA[i];
        table << "\n";
    }
    table << std::setw(22) << "Average" << std::setw(12) << res.average_mA << "\n";
    std::cout << table.str();

    const fs::path out(out_dir);
    fs::create_directories(out);
    json j;
    j["attributes"] = row_names;
    j["per_attribute_mA"] = res.per_attribute_mA;
    j["excluded"] = res.excluded;
    j["average_mA"] = res.average_mA;
    j["config"] = train_config_to_json(ckpt.config);
    write_text_file(out / "cross_eval.json", j.dump(2) + "\n");
    write_text_file(out / "cross_eval_table.txt", table.str());
    return 0;
}

std::vector<uint8_t> render_overlay(const Image& img, const Tensor& heat,
                                    const std::optional<Box>& box) {
    const int h = img.height, w = img.width;
    std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gray =
                0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
            const double a = std::clamp(heat.at(y, x), 0.0, 1.0);
            // fixed palette: heat fades the grayscale toward pure red
            const double r = gray * (1.0 - a) + a;
            const double g = gray * (1.0 - a);
            const double b = gray * (1.0 - a);
            const size_t at = (static_cast<size_t>(y) * w + x) * 3;
            rgb[at] = static_cast<uint8_t>(std::llround(std::clamp(r, 0.0, 1.0) * 255));
            rgb[at + 1] = static_cast<uint8_t>(std::llround(std::clamp(g, 0.0, 1.0) * 255));
            rgb[at + 2] = static_cast<uint8_t>(std::llround(std::clamp(b, 0.0, 1.0) * 255));
        }
    if (box) {
        const int x0 = std::clamp(static_cast<int>(std::llround(box->x_min)), 0, w - 1);
        const int x1 = std::clamp(static_cast<int>(std::llround(box->x_max)) - 1, 0, w - 1);
        const int y0 = std::clamp(static_cast<int>(std::llround(box->y_min)), 0, h - 1);
        const int y1 = std::clamp(static_cast<int>(std::llround(box->y_max)) - 1, 0, h - 1);
        auto stroke = [&](int y, int x) {
            const size_t at = (static_cast<size_t>(y) * w + x) * 3;
            rgb[at] = 0;
            rgb[at + 1] = 255;
            rgb[at + 2] = 0;
        };
        for (int x = x0; x <= x1; ++x) {
            stroke(y0, x);
            stroke(y1, x);
        }
        for (int y = y0; y <= y1; ++y) {
            stroke(y, x0);
            stroke(y, x1);
        }
    }
    return rgb;
}

int cmd_localize(const std::string& ckpt_path, const std::string& manifest,
                 const std::string& out_dir, double tau, const std::string& tau_sweep,
                 const std::string& attributes_arg, int limit) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Dataset ds = load_manifest(manifest, ckpt.schema, "test");
    if (ds.samples.empty()) throw Error("localize: empty dataset");

    std::vector<double> taus{tau};
    if (!tau_sweep.empty()) {
        taus.clear();
        std::stringstream ss(tau_sweep);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                taus.push_back(std::stod(tok));
            } catch (...) {
                throw UsageError("--tau-sweep: cannot parse '" + tok + "'");
            }
        }
        if (taus.empty()) throw UsageError("--tau-sweep: no values");
    }
    for (double t : taus)
        if (!(t >= 0.0 && t <= 1.0)) throw UsageError("tau must be in [0,1]");

    std::vector<int> attrs;
    if (attributes_arg.empty() || attributes_arg == "all") {
        for (int j = 0; j < ckpt.schema.num_attributes(); ++j) attrs.push_back(j);
    } else {
        std::stringstream ss(attributes_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const int j = ckpt.schema.attribute_index(tok);
            if (j < 0) throw UsageError("unknown attribute '" + tok + "'");
            attrs.push_back(j);
        }
    }

    const SspModel model = model_from_checkpoint(ckpt);
    const ModelCamSource cam(model);
    const fs::path out(out_dir);
    fs::create_directories(out / "overlays");
    std::ofstream records(out / "boxes.jsonl");
    if (!records) throw IoError("cannot write " + (out / "boxes.jsonl").string());

    const int n = limit > 0 ? std::min(limit, ds.size()) : ds.size();
    const int h = ckpt.schema.input_height, w = ckpt.schema.input_width;

    json report = json::array();
    bool any_gt = false;
    for (double t : taus) {
        // per attribute: (confidence, iou) pairs over positive samples with boxes
        std::map<int, std::vector<std::pair<double, double>>> pairs;
        for (int i = 0; i < n; ++i) {
            const Sample& s = ds.samples[static_cast<size_t>(i)];
            const auto results = loc::localize(cam, s, attrs, t, h, w);
            for (const auto& [j, res] : results) {
                json rec;
                rec["image"] = i;
                rec["attribute"] = ckpt.schema.attributes[static_cast<size_t>(j)];
                rec["tau"] = t;
                rec["confidence"] = res.confidence;
                if (res.box)
                    rec["box"] = {res.box->x_min, res.box->y_min, res.box->x_max, res.box->y_max};
                else
                    rec["box"] = nullptr;
                records << rec.dump() << "\n";

                const auto gt = s.gt_boxes.find(j);
                if (gt != s.gt_boxes.end() && s.labels[static_cast<size_t>(j)] == 1) {
                    any_gt = true;
                    const double v = res.box ? iou(*res.box, gt->second) : 0.0;
                    pairs[j].emplace_back(res.confidence, v);
                }
                if (t == taus.front()) {
                    const auto hm = loc::gradcam_p(cam, s, j, h, w);
                    char name[64];
                    std::snprintf(name, sizeof(name), "overlays/img%04d_%s.png", i,
                                  ckpt.schema.attributes[static_cast<size_t>(j)].c_str());
                    write_png_rgb(out / name, render_overlay(s.image, hm.upsampled, res.box), h, w);
                }
            }
        }
        if (any_gt) {
            LocalizationMetrics lm;
            double iou_sum = 0.0, pcc_sum = 0.0;
            int iou_cnt = 0, pcc_cnt = 0;
            for (const auto& [j, cv] : pairs) {
                lm.attribute_names.push_back(ckpt.schema.attributes[static_cast<size_t>(j)]);
                double s = 0.0;
                std::vector<double> confs, ious;
                for (const auto& [c, v] : cv) {
                    s += v;
                    confs.push_back(c);
                    ious.push_back(v);
                }
                const double mean_iou = s / cv.size();
                lm.mean_iou.push_back(mean_iou);
                lm.num_samples.push_back(static_cast<int>(cv.size()));
                iou_sum += mean_iou;
                ++iou_cnt;
                double p = std::nan("");
                if (cv.size() >= 2) {
                    try {
                        p = pcc(confs, ious);
                    } catch (const ValidationError&) {
                        // constant confidences or IoUs: leave undefined
                    }
                }
                lm.pccs.push_back(p);
                if (!std::isnan(p)) {
                    pcc_sum += p;
                    ++pcc_cnt;
                }
            }
            lm.average_iou = iou_cnt ? iou_sum / iou_cnt : 0.0;
            lm.average_pcc = pcc_cnt ? pcc_sum / pcc_cnt : 0.0;
            MetricReport section;
            section.localization = lm;
            json sec;
            sec["tau"] = t;
            sec["localization"] = metric_report_to_json(section)["localization"];
            report.push_back(sec);
            std::cout << "tau = " << t << "\n" << render_metric_table(section) << "\n";
        } else {
            json sec;
            sec["tau"] = t;
            sec["localization"] = nullptr;
            report.push_back(sec);
        }
    }
    json j;
    j["sections"] = report;
    j["config"] = train_config_to_json(ckpt.config);
    write_text_file(out / "localization.json", j.dump(2) + "\n");
    return 0;
}

int cmd_synth_gen(const std::string& spec_path, const std::string& out_dir, uint64_t seed) {
    SyntheticSpec spec;
    try {
        spec = load_synthetic_spec(spec_path);
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    } catch (const ParseError& e) {
        throw UsageError(e.what());
    }
    const Dataset ds = generate_synthetic(spec, seed);
    const fs::path out(out_dir);
    fs::create_directories(out);
    save_manifest(ds, out);
    save_schema(ds.schema, out / "schema.json");
    json echo = synthetic_spec_to_json(spec);
    echo["seed"] = seed;
    write_text_file(out / "spec_echo.json", echo.dump(2) + "\n");
    std::cout << "wrote " << ds.size() << " samples to " << out.string() << "\n";
    return 0;
}

int cmd_inspect_afss(const std::string& ckpt_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto& st = ckpt.selection;
    if (!st.is_frozen)
        std::cout << "warning: selection is still searching (no frozen scales yet)\n";
    std::cout << std::left << std::setw(22) << "Unit" << std::setw(10) << "P1" << std::setw(10)
              << "P2" << std::setw(10) << "P3" << std::setw(10) << "chosen" << "\n";
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);
    for (const auto& unit : st.units) {
        std::cout << std::setw(22) << unit;
        for (Level l : kLevels) {
            if (st.rounds(unit, l) > 0)
                std::cout << std::setw(10) << st.mean(unit, l);
            else
                std::cout << std::setw(10) << "-";
        }
        if (st.is_frozen)
            std::cout << std::setw(10) << level_name(st.frozen.at(unit));
        else
            std::cout << std::setw(10) << "-";
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pedestrian attribute recognition with scale and spatial priors"};
    app.require_subcommand(1);

    CommonArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    train_cmd->add_option("--config", train_args.config_path, "Train config JSON")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--seed", train_args.seed, "Seed override");
    train_cmd->add_option("--set", train_args.overrides, "key=value config override");
    train_cmd->add_option("--variant", train_args.variant, "PLE variant: R, K or S");

    std::string eval_ckpt, eval_manifest, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "Test manifest")->required();
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();

    std::string ce_ckpt, ce_manifest, ce_schema, ce_map, ce_out;
    auto* ce_cmd = app.add_subcommand("cross-eval", "Evaluate shared attributes across datasets");
    ce_cmd->add_option("--checkpoint", ce_ckpt, "Checkpoint file")->required();
    ce_cmd->add_option("--manifest", ce_manifest, "Target manifest")->required();
    ce_cmd->add_option("--target-schema", ce_schema, "Target schema JSON")->required();
    ce_cmd->add_option("--map", ce_map, "Attribute mapping JSON {source: target}")->required();
    ce_cmd->add_option("--out", ce_out, "Output directory")->required();

    std::string loc_ckpt, loc_manifest, loc_out, loc_sweep, loc_attrs;
    double loc_tau = 0.5;
    int loc_limit = 0;
    auto* loc_cmd = app.add_subcommand("localize", "Weakly supervised attribute localization");
    loc_cmd->add_option("--checkpoint", loc_ckpt, "Checkpoint file")->required();
    loc_cmd->add_option("--manifest", loc_manifest, "Manifest with images")->required();
    loc_cmd->add_option("--out", loc_out, "Output directory")->required();
    loc_cmd->add_option("--tau", loc_tau, "Binarization threshold (default 0.5)");
    loc_cmd->add_option("--tau-sweep", loc_sweep, "Comma list of thresholds");
    loc_cmd->add_option("--attributes", loc_attrs, "Comma list of attribute names (default all)");
    loc_cmd->add_option("--limit", loc_limit, "Process at most this many images");

    std::string sg_spec, sg_out;
    uint64_t sg_seed = 0;
    auto* sg_cmd = app.add_subcommand("synth-gen", "Generate a synthetic dataset");
    sg_cmd->add_option("--spec", sg_spec, "Synthetic spec JSON")->required();
    sg_cmd->add_option("--out", sg_out, "Output directory")->required();
    sg_cmd->add_option("--seed", sg_seed, "Generator seed");

    std::string ia_ckpt;
    auto* ia_cmd = app.add_subcommand("inspect-afss", "Show scale-selection statistics");
    ia_cmd->add_option("--checkpoint", ia_ckpt, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_out);
        if (ce_cmd->parsed()) return cmd_cross_eval(ce_ckpt, ce_manifest, ce_schema, ce_map, ce_out);
        if (loc_cmd->parsed())
            return cmd_localize(loc_ckpt, loc_manifest, loc_out, loc_tau, loc_sweep, loc_attrs,
                                loc_limit);
        if (sg_cmd->parsed()) return cmd_synth_gen(sg_spec, sg_out, sg_seed);
        if (ia_cmd->parsed()) return cmd_inspect_afss(ia_ckpt);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
