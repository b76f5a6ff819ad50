#pragma once

// Command implementations behind tools/retdm. Each returns a process exit code:
//   0 ok, 1 verification failure, 2 config, 3 data, 4 numerical abort.
// stdout receives JSON only; diagnostics go to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/config.hpp"
#include "retdm/dataset.hpp"
#include "retdm/error.hpp"
#include "retdm/log.hpp"
#include "retdm/metrics.hpp"
#include "retdm/networks.hpp"
#include "retdm/trainer.hpp"
#include "retdm/verify.hpp"

namespace retdm::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kConfig = 2, kData = 3, kNumeric = 4 };

// An error already assigned to an exit code.
class CommandError : public Error {
 public:
  CommandError(int code, const std::string& what) : Error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

// Runs `f`, turning anything it throws into a CommandError with `code`.
// Numerical failures keep their own code wherever they happen.
template <class F>
auto phase(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CommandError&) {
    throw;
  } catch (const NumericError& e) {
    throw CommandError(kNumeric, e.what());
  } catch (const std::exception& e) {
    throw CommandError(code, e.what());
  }
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const CommandError& e) {
    log::error(e.what());
    return e.code();
  } catch (const NumericError& e) {
    log::error(e.what());
    return kNumeric;
  } catch (const ConfigError& e) {
    log::error(e.what());
    return kConfig;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kData;
  }
}

inline void emit(const nlohmann::json& j) { std::cout << j.dump(2) << '\n' << std::flush; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

// Datasets given on the command line: a .json path is a PPM manifest, anything else a CSV.
inline MultiLabelDataset load_dataset_path(const std::string& path) {
  auto ds = std::filesystem::path(path).extension() == ".json" ? load_ppm_dir(path) : load_csv(path);
  ds.validate();
  return ds;
}

namespace artifact {
inline constexpr const char* checkpoint = "model.ckpt";
inline constexpr const char* train_report = "train_report.json";
inline constexpr const char* loss_curve = "loss_curve.csv";
inline constexpr const char* eval_report = "eval_report.json";
inline constexpr const char* test_split = "test_split.csv";
inline constexpr const char* config_echo = "config.json";
}  // namespace artifact

inline int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides = {}) {
  return guarded([&] {
    const RunConfig cfg = phase(kConfig, [&] { return load_run_config(config_path, overrides); });
    const PredictionRule rule = PredictionRule::parse(cfg.rule);
    const MultiLabelDataset ds = phase(kData, [&] {
      auto d = cfg.dataset.load();
      d.validate();
      return d;
    });
    phase(kConfig, [&] { rule.validate(ds.m); });
    RetdmModel model = phase(kConfig, [&] {
      return init_model(cfg.model.encoder(ds.input_size()), ds.m, cfg.train.seed, cfg.model.label_hidden);
    });

    const std::filesystem::path out = cfg.output_dir;
    phase(kData, [&] {
      std::filesystem::create_directories(out);
      write_text(out / artifact::config_echo, nlohmann::json(cfg).dump(2) + "\n");
    });
    log::info("training on " + std::to_string(ds.size()) + " samples, m=" + std::to_string(ds.m) +
              ", p=" + std::to_string(ds.input_size()) + ", mode " + nlohmann::json(cfg.train.loss_mode).get<std::string>());

    FitOptions options;
    options.rule = rule;
    options.on_epoch = [&](const EpochRecord& r, const RetdmModel& m) {
      std::ostringstream msg;
      msg << "epoch " << r.epoch << " stage " << r.stage << " lr " << r.lr << " train " << r.train_total
          << " val " << r.val_total;
      log::info(msg.str());
      if (cfg.checkpoint_every > 0 && r.epoch % cfg.checkpoint_every == 0) {
        std::ostringstream name;
        name << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << r.epoch << ".ckpt";
        save_checkpoint(m, (out / name.str()).string());
      }
    };
    const FitResult result = phase(kData, [&] { return fit(model, ds, cfg.train, options); });

    phase(kData, [&] {
      save_checkpoint(model, (out / artifact::checkpoint).string());
      write_text(out / artifact::train_report, to_json(result.report).dump(2) + "\n");
      write_text(out / artifact::loss_curve, loss_curve_csv(result.report));
      write_text(out / artifact::eval_report, nlohmann::json(result.report.test).dump(2) + "\n");
      write_csv(result.test, (out / artifact::test_split).string());
    });
    emit({{"output_dir", out.string()},
          {"artifacts",
           {artifact::checkpoint, artifact::train_report, artifact::loss_curve, artifact::eval_report,
            artifact::test_split, artifact::config_echo}},
          {"epochs", result.report.epochs.size()},
          {"test", result.report.test}});
    return int{kOk};
  });
}

inline int cmd_eval(const std::string& checkpoint, const std::string& dataset_path, const std::string& rule_text) {
  return guarded([&] {
    const PredictionRule rule = phase(kConfig, [&] { return PredictionRule::parse(rule_text); });
    const RetdmModel model = phase(kConfig, [&] { return load_checkpoint(checkpoint); });
    const MultiLabelDataset ds = phase(kData, [&] { return load_dataset_path(dataset_path); });
    if (ds.m != model.m)
      throw CommandError(kConfig, "dataset has m=" + std::to_string(ds.m) + ", checkpoint has m=" + std::to_string(model.m));
    if (ds.input_size() != model.image_spec.input_size)
      throw CommandError(kConfig, "dataset has " + std::to_string(ds.input_size()) + " inputs, checkpoint expects " +
                                      std::to_string(model.image_spec.input_size));
    phase(kConfig, [&] { rule.validate(model.m); });
    const EvalReport report = phase(kData, [&] { return evaluate_model(model, ds, rule); });
    emit(report);
    return int{kOk};
  });
}

inline int cmd_predict(const std::string& checkpoint, const std::string& input_csv, const std::string& out_csv,
                       const std::string& rule_text) {
  return guarded([&] {
    const PredictionRule rule = phase(kConfig, [&] { return PredictionRule::parse(rule_text); });
    const RetdmModel model = phase(kConfig, [&] { return load_checkpoint(checkpoint); });
    phase(kConfig, [&] { rule.validate(model.m); });
    const std::vector<Sample> rows = phase(kData, [&] { return load_feature_csv(input_csv); });
    if (rows.front().input.size() != model.image_spec.input_size)
      throw CommandError(kConfig, "input has " + std::to_string(rows.front().input.size()) +
                                      " feature columns, checkpoint expects " +
                                      std::to_string(model.image_spec.input_size));
    const ScoreMatrix scores = predict_scores(model, rows);
    const LabelMatrix pred = binarize(scores, rule);

    std::ostringstream os;
    os << "id";
    for (std::size_t j = 0; j < model.m; ++j) os << ",s" << j;
    for (std::size_t j = 0; j < model.m; ++j) os << ",b" << j;
    os << '\n';
    for (std::size_t i = 0; i < scores.n; ++i) {
      os << rows[i].id;
      for (std::size_t j = 0; j < scores.m; ++j) os << ',' << detail::format_double(scores(i, j));
      for (std::size_t j = 0; j < scores.m; ++j) os << ',' << static_cast<int>(pred(i, j));
      os << '\n';
    }
    phase(kData, [&] { write_text(out_csv, os.str()); });
    emit({{"output", out_csv}, {"rows", scores.n}, {"m", scores.m}, {"rule", rule.to_string()}});
    return int{kOk};
  });
}

inline int cmd_synth(const std::string& spec_path, const std::string& out_csv) {
  return guarded([&] {
    const SynthSpec spec = phase(kConfig, [&] { return load_synth_spec(spec_path); });
    const MultiLabelDataset ds = synth_correlated(spec);
    const std::string sidecar = out_csv + ".json";
    phase(kData, [&] {
      write_csv(ds, out_csv);
      write_text(sidecar, nlohmann::json{{"generator", "synth_correlated"}, {"spec", spec}, {"seed", spec.seed}}.dump(2) + "\n");
    });
    emit({{"output", out_csv}, {"sidecar", sidecar}, {"n", ds.size()}, {"m", ds.m}, {"p", ds.input_size()}});
    return int{kOk};
  });
}

// `suite` is one of verify::suite_names() or "all".
inline int cmd_verify(const std::string& suite, std::uint64_t seed = 0) {
  return guarded([&] {
    std::vector<std::string> names;
    if (suite == "all")
      names = verify::suite_names();
    else
      names.push_back(suite);

    nlohmann::json out{{"suites", nlohmann::json::array()}};
    bool all_pass = true;
    for (const auto& name : names) {
      const auto r = phase(kConfig, [&] { return verify::run_suite(name, seed); });
      all_pass = all_pass && r.pass();
      out["suites"].push_back(verify::to_json(r));
      for (const auto& c : r.checks) {
        char line[64];
        std::snprintf(line, sizeof line, "%-4s %-16s %12.4g  ", c.pass ? "PASS" : "FAIL", name.c_str(), c.value);
        std::cerr << line << c.name << '\n';
      }
    }
    out["pass"] = all_pass;
    emit(out);
    return all_pass ? int{kOk} : int{kVerifyFailed};
  });
}

}  // namespace retdm::cli
