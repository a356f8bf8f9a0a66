#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "csiloc/channel_sim.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/fusion.hpp"
#include "csiloc/posnet.hpp"

namespace csiloc {

enum class InputMode { kRaw, kDesigned, kLearned };
enum class FusionVariant { kNone, kFeature, kMapRnn, kMapConflation, kCombined };

inline std::string to_string(InputMode m) {
    switch (m) {
    case InputMode::kRaw: return "raw";
    case InputMode::kDesigned: return "designed";
    case InputMode::kLearned: return "learned";
    }
    return "?";
}

inline std::string to_string(FusionVariant v) {
    switch (v) {
    case FusionVariant::kNone: return "none";
    case FusionVariant::kFeature: return "feature";
    case FusionVariant::kMapRnn: return "map-rnn";
    case FusionVariant::kMapConflation: return "map-conflation";
    case FusionVariant::kCombined: return "combined";
    }
    return "?";
}

inline InputMode input_mode_from_string(const std::string &s) {
    if (s == "raw") return InputMode::kRaw;
    if (s == "designed") return InputMode::kDesigned;
    if (s == "learned") return InputMode::kLearned;
    throw ConfigError("unknown input mode '" + s + "' (raw|designed|learned)");
}

inline FusionVariant fusion_variant_from_string(const std::string &s) {
    if (s == "none") return FusionVariant::kNone;
    if (s == "feature") return FusionVariant::kFeature;
    if (s == "map-rnn") return FusionVariant::kMapRnn;
    if (s == "map-conflation") return FusionVariant::kMapConflation;
    if (s == "combined") return FusionVariant::kCombined;
    throw ConfigError("unknown fusion variant '" + s +
                      "' (none|feature|map-rnn|map-conflation|combined)");
}

struct ExperimentConfig {
    SimConfig sim;
    TrajectoryParams trajectory;
    int grid_rows = 8;
    int grid_cols = 8;
    InputMode mode = InputMode::kDesigned;
    FusionVariant fusion = FusionVariant::kNone;
    int delta = 2;
    int tau = 2;
    bool gru_tanh_candidate = false;
    MapFusionKind combined_map_fusion = MapFusionKind::kConflation;
    PosNetConfig net{{96, 64, 64, 64}, 0.5};
    TrainConfig train{1e-3, 100, 128, 1, false};
    int num_train = 4096;
    int num_test = 512;
    std::uint64_t seed = 1;
    std::string out_dir = ".";

    Grid grid() const { return Grid::cell_centered(sim.area_w, sim.area_h, grid_rows, grid_cols); }
    FusionConfig fusion_config() const {
        FusionConfig fc;
        fc.delta = delta;
        fc.tau = tau;
        fc.map_fusion = fusion == FusionVariant::kMapRnn
                            ? MapFusionKind::kRnn
                            : (fusion == FusionVariant::kCombined ? combined_map_fusion
                                                                  : MapFusionKind::kConflation);
        return fc;
    }
    void validate() const {
        sim.validate();
        if (grid_rows < 2 || grid_cols < 2) throw ConfigError("grid must be at least 2x2");
        if (delta < 0 || tau < 0) throw ConfigError("fusion delta/tau must be >= 0");
        if (num_train < 1 || num_test < 1) throw ConfigError("dataset sizes must be positive");
        if (train.epochs < 0 || train.batch < 1 || train.lr < 0)
            throw ConfigError("train config invalid (epochs >= 0, batch >= 1, lr >= 0)");
        if (net.hidden.empty()) throw ConfigError("net.hidden must not be empty");
        for (int h : net.hidden)
            if (h < 1) throw ConfigError("net.hidden entries must be positive");
        if (net.dropout_rate < 0 || net.dropout_rate >= 1)
            throw ConfigError("net.dropout must be in [0,1)");
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json &obj, std::initializer_list<const char *> allowed,
                                const std::string &path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char *k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("config: unknown key '" + path + it.key() + "'");
    }
}

inline const json *maybe(const json &obj, const char *key, json::value_t kind,
                         const std::string &path, const char *kind_name) {
    auto it = obj.find(key);
    if (it == obj.end()) return nullptr;
    const bool numeric_ok = kind == json::value_t::number_float && it->is_number();
    const bool int_ok = kind == json::value_t::number_integer && it->is_number_integer();
    if (it->type() != kind && !numeric_ok && !int_ok)
        throw ConfigError("config: '" + path + key + "' must be " + kind_name);
    return &*it;
}

inline void load_num(const json &obj, const char *key, double &out, const std::string &path) {
    if (const json *v = maybe(obj, key, json::value_t::number_float, path, "a number"))
        out = v->get<double>();
}
inline void load_int(const json &obj, const char *key, int &out, const std::string &path) {
    if (const json *v = maybe(obj, key, json::value_t::number_integer, path, "an integer"))
        out = v->get<int>();
}
inline void load_u64(const json &obj, const char *key, std::uint64_t &out,
                     const std::string &path) {
    if (const json *v = maybe(obj, key, json::value_t::number_integer, path, "an integer"))
        out = v->get<std::uint64_t>();
}
inline void load_bool(const json &obj, const char *key, bool &out, const std::string &path) {
    if (const json *v = maybe(obj, key, json::value_t::boolean, path, "a boolean"))
        out = v->get<bool>();
}
inline void load_str(const json &obj, const char *key, std::string &out, const std::string &path) {
    if (const json *v = maybe(obj, key, json::value_t::string, path, "a string"))
        out = v->get<std::string>();
}

} // namespace detail

// Parse and schema-validate an experiment config. Every key is optional and
// falls back to its default; unknown keys anywhere are rejected.
inline ExperimentConfig parse_experiment_config(const std::string &text) {
    using nlohmann::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::reject_unknown_keys(root,
                                {"sim", "trajectory", "grid", "mode", "fusion", "net", "train",
                                 "dataset", "seed", "out_dir"},
                                "");
    ExperimentConfig cfg;

    if (const json *sim = detail::maybe(root, "sim", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*sim,
                                    {"m_r", "w", "area_w", "area_h", "num_paths", "los", "snr_db",
                                     "antenna_spacing", "carrier_hz", "bandwidth_hz",
                                     "impairments"},
                                    "sim.");
        detail::load_int(*sim, "m_r", cfg.sim.m_r, "sim.");
        detail::load_int(*sim, "w", cfg.sim.w, "sim.");
        detail::load_num(*sim, "area_w", cfg.sim.area_w, "sim.");
        detail::load_num(*sim, "area_h", cfg.sim.area_h, "sim.");
        detail::load_int(*sim, "num_paths", cfg.sim.num_paths, "sim.");
        detail::load_bool(*sim, "los", cfg.sim.los, "sim.");
        detail::load_num(*sim, "snr_db", cfg.sim.snr_db, "sim.");
        detail::load_num(*sim, "antenna_spacing", cfg.sim.antenna_spacing, "sim.");
        detail::load_num(*sim, "carrier_hz", cfg.sim.carrier_hz, "sim.");
        detail::load_num(*sim, "bandwidth_hz", cfg.sim.bandwidth_hz, "sim.");
        if (const json *imp = detail::maybe(*sim, "impairments", json::value_t::object,
                                            "sim.", "an object")) {
            detail::reject_unknown_keys(
                *imp, {"global_phase", "timing_offset_max", "per_antenna_gain_jitter_db"},
                "sim.impairments.");
            detail::load_bool(*imp, "global_phase", cfg.sim.imp.global_phase, "sim.impairments.");
            detail::load_num(*imp, "timing_offset_max", cfg.sim.imp.timing_offset_max,
                             "sim.impairments.");
            detail::load_num(*imp, "per_antenna_gain_jitter_db",
                             cfg.sim.imp.per_antenna_gain_jitter_db, "sim.impairments.");
        }
    }
    if (const json *tr = detail::maybe(root, "trajectory", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*tr, {"speed", "interval", "samples_per_trajectory"},
                                    "trajectory.");
        detail::load_num(*tr, "speed", cfg.trajectory.speed, "trajectory.");
        detail::load_num(*tr, "interval", cfg.trajectory.interval, "trajectory.");
        detail::load_int(*tr, "samples_per_trajectory", cfg.trajectory.samples_per_trajectory,
                         "trajectory.");
    }
    if (const json *grid = detail::maybe(root, "grid", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*grid, {"rows", "cols"}, "grid.");
        detail::load_int(*grid, "rows", cfg.grid_rows, "grid.");
        detail::load_int(*grid, "cols", cfg.grid_cols, "grid.");
    }
    {
        std::string mode = to_string(cfg.mode);
        detail::load_str(root, "mode", mode, "");
        cfg.mode = input_mode_from_string(mode);
    }
    if (const json *fu = detail::maybe(root, "fusion", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(
            *fu, {"variant", "delta", "tau", "tanh_candidate", "combined_map_fusion"}, "fusion.");
        std::string variant = to_string(cfg.fusion);
        detail::load_str(*fu, "variant", variant, "fusion.");
        cfg.fusion = fusion_variant_from_string(variant);
        detail::load_int(*fu, "delta", cfg.delta, "fusion.");
        detail::load_int(*fu, "tau", cfg.tau, "fusion.");
        detail::load_bool(*fu, "tanh_candidate", cfg.gru_tanh_candidate, "fusion.");
        std::string cmf = cfg.combined_map_fusion == MapFusionKind::kRnn ? "rnn" : "conflation";
        detail::load_str(*fu, "combined_map_fusion", cmf, "fusion.");
        if (cmf == "rnn")
            cfg.combined_map_fusion = MapFusionKind::kRnn;
        else if (cmf == "conflation")
            cfg.combined_map_fusion = MapFusionKind::kConflation;
        else
            throw ConfigError("config: fusion.combined_map_fusion must be rnn|conflation");
    }
    if (const json *net = detail::maybe(root, "net", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*net, {"hidden", "dropout"}, "net.");
        if (const json *hid = detail::maybe(*net, "hidden", nlohmann::json::value_t::array, "net.",
                                            "an array")) {
            cfg.net.hidden.clear();
            for (const auto &v : *hid) {
                if (!v.is_number_integer())
                    throw ConfigError("config: net.hidden entries must be integers");
                cfg.net.hidden.push_back(v.get<int>());
            }
        }
        detail::load_num(*net, "dropout", cfg.net.dropout_rate, "net.");
    }
    if (const json *tr = detail::maybe(root, "train", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*tr, {"lr", "epochs", "batch"}, "train.");
        detail::load_num(*tr, "lr", cfg.train.lr, "train.");
        detail::load_int(*tr, "epochs", cfg.train.epochs, "train.");
        detail::load_int(*tr, "batch", cfg.train.batch, "train.");
    }
    if (const json *ds = detail::maybe(root, "dataset", json::value_t::object, "", "an object")) {
        detail::reject_unknown_keys(*ds, {"num_train", "num_test"}, "dataset.");
        detail::load_int(*ds, "num_train", cfg.num_train, "dataset.");
        detail::load_int(*ds, "num_test", cfg.num_test, "dataset.");
    }
    detail::load_u64(root, "seed", cfg.seed, "");
    detail::load_str(root, "out_dir", cfg.out_dir, "");
    cfg.train.seed = cfg.seed;
    cfg.sim.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

// Canonical JSON echo of a config (used in checkpoints and reports).
inline std::string experiment_config_json(const ExperimentConfig &cfg) {
    nlohmann::json j;
    j["sim"] = {{"m_r", cfg.sim.m_r},
                {"w", cfg.sim.w},
                {"area_w", cfg.sim.area_w},
                {"area_h", cfg.sim.area_h},
                {"num_paths", cfg.sim.num_paths},
                {"los", cfg.sim.los},
                {"snr_db", cfg.sim.snr_db},
                {"antenna_spacing", cfg.sim.antenna_spacing},
                {"carrier_hz", cfg.sim.carrier_hz},
                {"bandwidth_hz", cfg.sim.bandwidth_hz},
                {"impairments",
                 {{"global_phase", cfg.sim.imp.global_phase},
                  {"timing_offset_max", cfg.sim.imp.timing_offset_max},
                  {"per_antenna_gain_jitter_db", cfg.sim.imp.per_antenna_gain_jitter_db}}}};
    j["trajectory"] = {{"speed", cfg.trajectory.speed},
                       {"interval", cfg.trajectory.interval},
                       {"samples_per_trajectory", cfg.trajectory.samples_per_trajectory}};
    j["grid"] = {{"rows", cfg.grid_rows}, {"cols", cfg.grid_cols}};
    j["mode"] = to_string(cfg.mode);
    j["fusion"] = {{"variant", to_string(cfg.fusion)},
                   {"delta", cfg.delta},
                   {"tau", cfg.tau},
                   {"tanh_candidate", cfg.gru_tanh_candidate},
                   {"combined_map_fusion",
                    cfg.combined_map_fusion == MapFusionKind::kRnn ? "rnn" : "conflation"}};
    j["net"] = {{"hidden", cfg.net.hidden}, {"dropout", cfg.net.dropout_rate}};
    j["train"] = {{"lr", cfg.train.lr}, {"epochs", cfg.train.epochs}, {"batch", cfg.train.batch}};
    j["dataset"] = {{"num_train", cfg.num_train}, {"num_test", cfg.num_test}};
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2);
}

} // namespace csiloc
