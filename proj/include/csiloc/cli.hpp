#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "csiloc/config.hpp"
#include "csiloc/pipeline.hpp"

// Subcommand implementations for the csi_locate binary, kept header-side so
// the test suite can drive them in-process. Exit codes: 0 success, 2 config
// error, 3 data error, 4 numerical abort, 1 anything else.

namespace csiloc::cli {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::string> fusion;
    std::optional<std::string> out;

    bool any() const { return seed || mode || fusion || out; }
};

inline ExperimentConfig load_config(const std::string &path, const Overrides &ov) {
    ExperimentConfig cfg;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        cfg = parse_experiment_config(ss.str());
    }
    if (ov.seed) {
        cfg.seed = *ov.seed;
        cfg.sim.seed = *ov.seed;
        cfg.train.seed = *ov.seed;
    }
    if (ov.mode) cfg.mode = input_mode_from_string(*ov.mode);
    if (ov.fusion) cfg.fusion = fusion_variant_from_string(*ov.fusion);
    if (ov.out) cfg.out_dir = *ov.out;
    cfg.validate();
    return cfg;
}

namespace fs = std::filesystem;

inline fs::path ensure_out_dir(const std::string &dir) {
    const fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p))
        throw DataError("cannot create output directory " + p.string());
    return p;
}

inline std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

inline std::string fmt_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const fs::path &p) {
    std::ofstream os(p);
    if (!os) throw DataError("cannot open " + p.string() + " for writing");
    return os;
}

// ---------------------------------------------------------------- simulate

inline int cmd_simulate(const ExperimentConfig &cfg, std::ostream &os) {
    const fs::path dir = ensure_out_dir(cfg.out_dir);
    ChannelSim sim(cfg.sim);
    auto [train, test] = generate_dataset(sim, cfg.num_train, cfg.num_test, cfg.trajectory);
    const fs::path train_path = dir / "train.csip";
    const fs::path test_path = dir / "test.csip";
    write_dataset(train_path.string(), to_dataset(std::uint32_t(cfg.sim.m_r),
                                                  std::uint32_t(cfg.sim.w), std::move(train)));
    write_dataset(test_path.string(), to_dataset(std::uint32_t(cfg.sim.m_r),
                                                 std::uint32_t(cfg.sim.w), std::move(test)));

    os << "simulated " << cfg.num_train << " train + " << cfg.num_test << " test measurements\n";
    os << "  array " << cfg.sim.m_r << " antennas x " << cfg.sim.w << " subcarriers, area "
       << fmt(cfg.sim.area_w, 1) << " x " << fmt(cfg.sim.area_h, 1) << " m, " << cfg.sim.num_paths
       << (cfg.sim.los ? " paths (LoS)" : " paths (NLoS)") << "\n";
    os << "  SNR ";
    if (cfg.sim.snr_db >= SimConfig::kNoiseless)
        os << "noiseless";
    else
        os << fmt(cfg.sim.snr_db, 1) << " dB";
    os << ", impairments: global_phase=" << (cfg.sim.imp.global_phase ? "on" : "off")
       << " timing_offset_max=" << fmt(cfg.sim.imp.timing_offset_max, 3)
       << " gain_jitter_db=" << fmt(cfg.sim.imp.per_antenna_gain_jitter_db, 2) << "\n";
    os << "  seed " << cfg.seed << "\n";
    os << "wrote " << train_path.string() << " and " << test_path.string() << "\n";
    return 0;
}

// ------------------------------------------------------------------- train

inline int cmd_train(const std::optional<ExperimentConfig> &cfg, const std::string &data_path,
                     const std::string &val_path, const std::string &resume_path, bool verbose,
                     const std::string &out_override, std::ostream &os) {
    TrainState<double> st;
    if (resume_path.empty()) {
        st = init_state<double>(cfg ? *cfg : ExperimentConfig{});
    } else {
        // architecture and hyperparameters come from the checkpoint; the
        // active config only decides how many more epochs to run
        st = load_state<double>(resume_path);
        os << "resuming from " << resume_path << " at epoch " << st.epochs_done << "\n";
    }
    const int epochs = cfg ? cfg->train.epochs : st.model.cfg.train.epochs;
    std::string out_dir = cfg ? cfg->out_dir : st.model.cfg.out_dir;
    if (!out_override.empty()) out_dir = out_override;

    const Dataset ds = read_dataset(data_path);
    const std::uint64_t epoch0 = st.epochs_done;
    const auto curve = fit(st, ds.records, epochs, verbose ? &os : nullptr);

    const fs::path dir = ensure_out_dir(out_dir);
    {
        auto lc = open_out(dir / "loss.csv");
        lc << "epoch,loss\n";
        for (std::size_t i = 0; i < curve.size(); ++i)
            lc << (epoch0 + i) << "," << fmt_full(curve[i]) << "\n";
    }
    const fs::path model_path = dir / "model.csim";
    save_state(model_path.string(), st);

    os << "trained " << epochs << " epochs (" << st.epochs_done << " total) on "
       << ds.records.size() << " measurements, mode " << to_string(st.model.cfg.mode)
       << ", fusion " << to_string(st.model.cfg.fusion) << "\n";
    if (!curve.empty()) os << "final loss " << fmt(curve.back(), 6) << "\n";
    const EvalOutput tr = evaluate_model(st.model, ds.records);
    os << "train MDE " << fmt(tr.metrics.mde) << " m over " << tr.metrics.count << " windows\n";
    if (!val_path.empty()) {
        const Dataset vds = read_dataset(val_path);
        const EvalOutput va = evaluate_model(st.model, vds.records);
        os << "val MDE " << fmt(va.metrics.mde) << " m over " << va.metrics.count << " windows\n";
    }
    os << "wrote " << model_path.string() << " and loss.csv\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

inline void dump_probability_maps(Model<double> &m, const std::vector<CsiMeasurement> &recs,
                                  int n, const fs::path &dir, std::ostream &os) {
    NoGradGuard ng;
    const auto windows = index_windows(recs, 1);
    const auto prep = detail::prepare_records(m, recs);
    const std::size_t count = std::min(std::size_t(n), windows.size());
    const fs::path maps_dir = dir / "maps";
    std::error_code ec;
    fs::create_directories(maps_dir, ec);
    for (std::size_t b0 = 0; b0 < count; b0 += 128) {
        const std::size_t b1 = std::min(count, b0 + 128);
        std::vector<std::size_t> batch(b1 - b0);
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = b0 + i;
        auto maps = detail::group_maps(m, recs, prep, windows, batch, 1, 1, Mode::kEval, nullptr);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const ProbMap p = detail::map_row(maps[0], b);
            auto f = open_out(maps_dir / ("map_" + std::to_string(b0 + b) + ".csv"));
            export_map_csv(f, p, m.grid);
        }
    }
    os << "dumped " << count << " probability maps to " << maps_dir.string() << "\n";
}

inline int cmd_evaluate(const std::string &model_path, const std::string &data_path,
                        const std::string &out_override, const std::string &fusion_override,
                        int dump_maps, std::ostream &os) {
    TrainState<double> st = load_state<double>(model_path);
    const Dataset ds = read_dataset(data_path);
    std::string out_dir = st.model.cfg.out_dir;
    if (!out_override.empty()) out_dir = out_override;
    const fs::path dir = ensure_out_dir(out_dir);

    FusionVariant primary = st.model.cfg.fusion;
    if (!fusion_override.empty()) {
        primary = fusion_variant_from_string(fusion_override);
        if (delta_eff(st.model.cfg, primary) > 0 && !st.model.gru)
            throw ConfigError("checkpoint has no feature-fusion GRU for variant " +
                              fusion_override);
        if (variant_uses_map_rnn(st.model.cfg, primary) && !st.model.map_rnn)
            throw ConfigError("checkpoint has no map-fusion RNN for variant " + fusion_override);
    }

    std::vector<std::pair<FusionVariant, EvalOutput>> columns;
    columns.emplace_back(primary, evaluate_model(st.model, ds.records, primary));
    if (primary != FusionVariant::kNone)
        columns.emplace_back(FusionVariant::kNone,
                             evaluate_model(st.model, ds.records, FusionVariant::kNone));

    {
        auto ec = open_out(dir / "errors.csv");
        ec << "variant,index,timestamp,ue_id,true_x,true_y,pred_x,pred_y,error_m\n";
        for (const auto &[v, ev] : columns)
            for (std::size_t i = 0; i < ev.estimates.size(); ++i) {
                const auto &rec = ds.records[ev.record_idx[i]];
                ec << to_string(v) << "," << ev.record_idx[i] << "," << fmt_full(rec.timestamp)
                   << "," << rec.ue_id << "," << fmt_full(rec.position[0]) << ","
                   << fmt_full(rec.position[1]) << "," << fmt_full(ev.estimates[i].x[0]) << ","
                   << fmt_full(ev.estimates[i].x[1]) << "," << fmt_full(ev.errors[i]) << "\n";
            }
    }
    nlohmann::json rep;
    rep["model"] = {{"path", model_path},
                    {"mode", to_string(st.model.cfg.mode)},
                    {"fusion", to_string(st.model.cfg.fusion)},
                    {"epochs", st.epochs_done}};
    rep["dataset"] = {{"path", data_path},
                      {"records", ds.records.size()},
                      {"m_r", ds.m_r},
                      {"w", ds.w}};
    for (const auto &[v, ev] : columns)
        rep["columns"][to_string(v)] = {{"mde", ev.metrics.mde},
                                        {"p50", ev.metrics.p50},
                                        {"p90", ev.metrics.p90},
                                        {"p95", ev.metrics.p95},
                                        {"count", ev.metrics.count}};
    {
        auto rp = open_out(dir / "report.json");
        rp << rep.dump(2) << "\n";
    }

    os << "variant          MDE      p50      p90      p95    count\n";
    for (const auto &[v, ev] : columns) {
        char line[160];
        std::snprintf(line, sizeof line, "%-14s %6.4f  %6.4f  %6.4f  %6.4f  %7zu\n",
                      to_string(v).c_str(), ev.metrics.mde, ev.metrics.p50, ev.metrics.p90,
                      ev.metrics.p95, ev.metrics.count);
        os << line;
    }
    if (dump_maps > 0) dump_probability_maps(st.model, ds.records, dump_maps, dir, os);
    os << "wrote report.json and errors.csv\n";
    return 0;
}

// ----------------------------------------------------------------- predict

inline int cmd_predict(const std::string &model_path, const std::string &data_path,
                       const std::string &out_override, std::ostream &os) {
    TrainState<double> st = load_state<double>(model_path);
    const Dataset ds = read_dataset(data_path);
    std::string out_dir = st.model.cfg.out_dir;
    if (!out_override.empty()) out_dir = out_override;
    const fs::path dir = ensure_out_dir(out_dir);

    const EvalOutput ev = evaluate_model(st.model, ds.records);
    const fs::path out_path = dir / "predictions.csv";
    {
        auto pc = open_out(out_path);
        pc << "index,timestamp,ue_id,x,y\n";
        for (std::size_t i = 0; i < ev.estimates.size(); ++i) {
            const auto &rec = ds.records[ev.record_idx[i]];
            pc << ev.record_idx[i] << "," << fmt_full(rec.timestamp) << "," << rec.ue_id << ","
               << fmt_full(ev.estimates[i].x[0]) << "," << fmt_full(ev.estimates[i].x[1]) << "\n";
        }
    }
    os << "wrote " << ev.estimates.size() << " predictions to " << out_path.string() << "\n";
    return 0;
}

// --------------------------------------------------------------- replicate

inline void print_replicate_table(const ReplicateTable &t, std::ostream &os) {
    std::string header = "mode      ";
    for (FusionVariant v : t.variants) {
        std::string name = to_string(v);
        header += std::string(name.size() < 16 ? 16 - name.size() : 1, ' ') + name;
    }
    os << header << "\n";
    for (std::size_t mi = 0; mi < t.modes.size(); ++mi) {
        char cell[32];
        std::string line = to_string(t.modes[mi]);
        line += std::string(line.size() < 10 ? 10 - line.size() : 1, ' ');
        for (std::size_t vi = 0; vi < t.variants.size(); ++vi) {
            std::snprintf(cell, sizeof cell, "%16.4f", t.cells[mi][vi].median_mde);
            line += cell;
        }
        os << line << "\n";
    }
}

inline int cmd_replicate(const ExperimentConfig &cfg, int seeds, std::ostream &os) {
    const fs::path dir = ensure_out_dir(cfg.out_dir);
    ChannelSim sim(cfg.sim);
    auto [train, test] = generate_dataset(sim, cfg.num_train, cfg.num_test, cfg.trajectory);

    const std::vector<InputMode> modes{InputMode::kRaw, InputMode::kDesigned,
                                       InputMode::kLearned};
    const std::vector<FusionVariant> variants{FusionVariant::kNone, FusionVariant::kFeature,
                                              FusionVariant::kMapRnn,
                                              FusionVariant::kMapConflation,
                                              FusionVariant::kCombined};
    const int threads = replicate_threads();
    os << "replicate: " << modes.size() * variants.size() << " cells x " << seeds
       << " seeds on " << train.size() << "/" << test.size() << " samples, " << threads
       << (threads == 1 ? " thread" : " threads") << "\n";
    const ReplicateTable table =
        replicate_matrix<double>(cfg, train, test, modes, variants, seeds, threads, &os);

    os << "\nmedian test MDE (m) over " << seeds << " seeds:\n";
    print_replicate_table(table, os);

    {
        auto rc = open_out(dir / "replicate.csv");
        rc << "mode,variant,median_mde";
        for (int s = 0; s < seeds; ++s) rc << ",mde_seed" << s;
        rc << "\n";
        for (const auto &row : table.cells)
            for (const auto &cell : row) {
                rc << to_string(cell.mode) << "," << to_string(cell.variant) << ","
                   << fmt_full(cell.median_mde);
                for (double v : cell.seed_mdes) rc << "," << fmt_full(v);
                rc << "\n";
            }
    }
    {
        nlohmann::json rep;
        rep["seeds"] = seeds;
        rep["train_samples"] = train.size();
        rep["test_samples"] = test.size();
        rep["cells"] = nlohmann::json::array();
        for (const auto &row : table.cells)
            for (const auto &cell : row)
                rep["cells"].push_back({{"mode", to_string(cell.mode)},
                                        {"variant", to_string(cell.variant)},
                                        {"median_mde", cell.median_mde},
                                        {"seed_mdes", cell.seed_mdes}});
        auto rj = open_out(dir / "replicate.json");
        rj << rep.dump(2) << "\n";
    }
    os << "wrote replicate.csv and replicate.json\n";
    return 0;
}

// --------------------------------------------------------------- front end

inline std::uint64_t parse_seed(const std::string &s) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw ConfigError("invalid --seed value '" + s + "'");
        return v;
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &) {
        throw ConfigError("invalid --seed value '" + s + "'");
    }
}

inline int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"CSI fingerprinting indoor positioning pipeline"};
    app.require_subcommand(1);

    std::string config_path, seed_s, mode_s, fusion_s, out_s;
    std::string data_path, val_path, resume_path, model_path;
    bool verbose = false;
    int dump_maps = 0;
    int seeds = 3;

    const std::vector<std::string> mode_names{"raw", "designed", "learned"};
    const std::vector<std::string> fusion_names{"none", "feature", "map-rnn", "map-conflation",
                                                "combined"};

    auto add_config_flags = [&](CLI::App *cmd, bool with_model_flags) {
        cmd->add_option("--config", config_path, "JSON experiment config (defaults apply)");
        cmd->add_option("--seed", seed_s, "override the experiment seed");
        cmd->add_option("--out", out_s, "output directory");
        if (with_model_flags) {
            cmd->add_option("--mode", mode_s, "input mode")->check(CLI::IsMember(mode_names));
            cmd->add_option("--fusion", fusion_s, "fusion variant")
                ->check(CLI::IsMember(fusion_names));
        }
    };

    CLI::App *sim = app.add_subcommand("simulate", "generate synthetic train/test datasets");
    add_config_flags(sim, false);

    CLI::App *train = app.add_subcommand("train", "train a model on a dataset");
    add_config_flags(train, true);
    train->add_option("--data", data_path, "training dataset (.csip)")->required();
    train->add_option("--val", val_path, "validation dataset (.csip)");
    train->add_option("--resume", resume_path,
                      "checkpoint to continue from (its config wins; the active config only "
                      "sets how many more epochs to run)");
    train->add_flag("--verbose", verbose, "print per-epoch losses");

    CLI::App *eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    eval->add_option("--model", model_path, "model checkpoint (.csim)")->required();
    eval->add_option("--data", data_path, "dataset (.csip)")->required();
    eval->add_option("--out", out_s, "output directory");
    eval->add_option("--fusion", fusion_s, "evaluate this variant instead of the trained one")
        ->check(CLI::IsMember(fusion_names));
    eval->add_option("--dump-maps", dump_maps, "dump the first N probability maps as CSV");

    CLI::App *pred = app.add_subcommand("predict", "write per-sample position estimates");
    pred->add_option("--model", model_path, "model checkpoint (.csim)")->required();
    pred->add_option("--data", data_path, "dataset (.csip)")->required();
    pred->add_option("--out", out_s, "output directory");

    CLI::App *rep = app.add_subcommand("replicate",
                                       "train and evaluate the full mode x fusion matrix");
    add_config_flags(rep, false);
    rep->add_option("--seeds", seeds, "seeds per cell (median is reported)")
        ->check(CLI::PositiveNumber);

    std::vector<const char *> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("csi_locate");
    for (const auto &a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "config error: " << e.get_name() << ": " << e.what() << "\n";
        return 2;
    }

    try {
        Overrides ov;
        if (!seed_s.empty()) ov.seed = parse_seed(seed_s);
        if (!mode_s.empty()) ov.mode = mode_s;
        if (!fusion_s.empty()) ov.fusion = fusion_s;
        if (!out_s.empty()) ov.out = out_s;

        if (app.got_subcommand(sim)) return cmd_simulate(load_config(config_path, ov), out);
        if (app.got_subcommand(train)) {
            std::optional<ExperimentConfig> cfg;
            if (resume_path.empty()) {
                cfg = load_config(config_path, ov);
            } else if (ov.seed || ov.mode || ov.fusion) {
                throw ConfigError(
                    "--seed/--mode/--fusion cannot be combined with --resume; the checkpoint "
                    "fixes them");
            } else if (!config_path.empty()) {
                cfg = load_config(config_path, ov);
            }
            return cmd_train(cfg, data_path, val_path, resume_path, verbose, out_s, out);
        }
        if (app.got_subcommand(eval))
            return cmd_evaluate(model_path, data_path, out_s, fusion_s, dump_maps, out);
        if (app.got_subcommand(pred)) return cmd_predict(model_path, data_path, out_s, out);
        if (app.got_subcommand(rep)) return cmd_replicate(load_config(config_path, ov), seeds, out);
        err << "config error: no subcommand\n";
        return 2;
    } catch (const ConfigError &e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError &e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError &e) {
        err << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace csiloc::cli
