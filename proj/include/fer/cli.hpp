#pragma once

// Command-line front end. `cli_dispatch` is the whole program; tools/fer_cli.cpp
// only forwards argv so tests can drive the CLI in-process.
//
// Exit codes: 0 success, 1 domain failure (one line `error: <kind>: <message>`
// on stderr), 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "fer/ensemble.hpp"
#include "fer/error.hpp"
#include "fer/fer_data.hpp"
#include "fer/metrics.hpp"
#include "fer/model.hpp"
#include "fer/training.hpp"

namespace fer {

namespace detail {

inline Dataset load_split(const std::string& csv, const std::string& split) {
  const Dataset all = parse_fer_csv(std::filesystem::path(csv));
  if (split == "all") return all;
  return select_split(all, usage_from_split(split));
}

inline void report(std::ostream& out, const Metrics& m, bool json) {
  if (json) {
    out << metrics_json(m).dump() << '\n';
  } else {
    print_metrics(out, m);
  }
}

/// Ensemble member probabilities: a probability CSV as is, or a checkpoint
/// evaluated on `split`.
inline ProbMatrix member_probs(const std::string& path, const Dataset& split, std::size_t batch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (in && std::string_view(magic, 8) == kTensorFileMagic) {
    auto ck = load_checkpoint<float>(path);
    return predict_probs(ck.model, split, batch);
  }
  return read_prob_csv(std::filesystem::path(path));
}

inline int cmd_inspect(const std::string& csv, bool json, std::ostream& out, std::ostream& err) {
  const Dataset d = parse_fer_csv(std::filesystem::path(csv));
  const Splits s = split_by_usage(d);
  const auto counts = d.class_counts();
  const auto warnings = canonical_count_warnings(d);
  if (json) {
    nlohmann::json classes = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumClasses; ++c) classes[std::string(kClassNames[c])] = counts[c];
    char digest[24];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(d.digest));
    out << nlohmann::json{{"examples", d.size()},
                          {"splits", {{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}}},
                          {"class_counts", classes},
                          {"digest", digest},
                          {"canonical", warnings.empty()}}
               .dump()
        << '\n';
  } else {
    out << "examples " << d.size() << '\n';
    out << "splits   train " << s.train.size() << "  val " << s.val.size() << "  test "
        << s.test.size() << '\n';
    out << "classes ";
    for (std::size_t c = 0; c < kNumClasses; ++c) out << ' ' << kClassNames[c] << ' ' << counts[c];
    out << '\n';
    char digest[40];
    std::snprintf(digest, sizeof digest, "digest   %016llx\n", static_cast<unsigned long long>(d.digest));
    out << digest;
  }
  for (const auto& w : warnings) err << "warning: not canonical FER-2013: " << w << '\n';
  return 0;
}

struct TrainArgs {
  std::string model = "five-layer";
  std::string data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::string out_dir;
  std::size_t train_subset = 0;
  std::size_t val_subset = 0;
  std::string resume;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  TrainingConfig cfg = a.config.empty() ? TrainingConfig{} : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  cfg.validate();

  const Splits s = split_by_usage(parse_fer_csv(fs::path(a.data)));
  const Dataset train_set = a.train_subset ? sample_subset(s.train, a.train_subset, cfg.seed) : s.train;
  const Dataset val_set = a.val_subset ? sample_subset(s.val, a.val_subset, cfg.seed + 1) : s.val;

  fs::create_directories(a.out_dir);
  const fs::path last = fs::path(a.out_dir) / "last.ckpt";
  const fs::path best = fs::path(a.out_dir) / "best.ckpt";
  const fs::path history = fs::path(a.out_dir) / "history.csv";

  std::optional<Model<float>> model;
  SgdMomentum<float> optimizer;
  TrainState state;
  if (!a.resume.empty()) {
    auto ck = load_checkpoint<float>(a.resume);
    model.emplace(std::move(ck.model));
    optimizer = std::move(ck.optimizer);
    state = std::move(ck.state);
    if (a.max_epochs) ck.config.max_epochs = *a.max_epochs;
    cfg = ck.config;
  } else {
    model.emplace(spec_by_name(a.model), cfg.seed);
    state = TrainState::initial(cfg);
  }

  out << "training " << model->spec().name << " on " << train_set.size() << " examples, validating on "
      << val_set.size() << '\n';
  state = train(*model, optimizer, train_set, val_set, cfg, std::move(state),
                [&](const TrainState& st, bool improved) {
                  const HistoryRow& r = st.history.back();
                  char buf[200];
                  std::snprintf(buf, sizeof buf,
                                "epoch %3zu  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f  lr %.6g%s\n",
                                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr,
                                improved ? "  *" : "");
                  out << buf << std::flush;
                  save_checkpoint(last, *model, optimizer, st, cfg);
                  if (improved) save_checkpoint(best, *model, optimizer, st, cfg);
                  write_history_csv(st.history, history);
                });
  write_history_csv(state.history, history);
  out << (state.stopped_early ? "early stop" : "finished") << " after epoch " << state.epoch
      << "; best val_acc " << state.best_val_acc << " at epoch " << state.best_epoch << '\n';
  return 0;
}

}  // namespace detail

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"FER-2013 CNN training, evaluation and soft-voting ensembles", "fer"};
  app.require_subcommand(1);

  auto* data = app.add_subcommand("data", "Dataset utilities");
  data->require_subcommand(1);
  auto* inspect = data->add_subcommand("inspect", "Parse a FER-2013 CSV and report counts");
  std::string inspect_csv;
  bool inspect_json = false;
  inspect->add_option("csv", inspect_csv, "FER-2013 CSV")->required();
  inspect->add_flag("--json", inspect_json, "Machine-readable output");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  detail::TrainArgs targs;
  train_cmd->add_option("--model", targs.model, "baseline | five-layer")
      ->check(CLI::IsMember({"baseline", "five-layer"}));
  train_cmd->add_option("--data", targs.data, "FER-2013 CSV")->required();
  train_cmd->add_option("--config", targs.config, "Training config JSON");
  train_cmd->add_option("--seed", targs.seed, "Overrides the config seed");
  train_cmd->add_option("--max-epochs", targs.max_epochs, "Overrides the config epoch budget");
  train_cmd->add_option("--out", targs.out_dir, "Output directory")->required();
  train_cmd->add_option("--train-subset", targs.train_subset, "Random training subset size (0 = all)");
  train_cmd->add_option("--val-subset", targs.val_subset, "Random validation subset size (0 = all)");
  train_cmd->add_option("--resume", targs.resume, "Continue from a checkpoint");

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
  std::string ckpt, csv, split = "test", out_path;
  std::size_t batch = 256;
  bool json = false;
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data", csv)->required();
  eval_cmd->add_option("--split", split, "train | val | test")->capture_default_str();
  eval_cmd->add_option("--batch-size", batch)->capture_default_str();
  eval_cmd->add_flag("--json", json);

  auto* probs_cmd = app.add_subcommand("export-probs", "Write per-example class probabilities");
  probs_cmd->add_option("--checkpoint", ckpt)->required();
  probs_cmd->add_option("--data", csv)->required();
  probs_cmd->add_option("--split", split, "train | val | test")->capture_default_str();
  probs_cmd->add_option("--batch-size", batch)->capture_default_str();
  probs_cmd->add_option("--out", out_path)->required();

  auto* pre_cmd = app.add_subcommand("export-preprocessed",
                                     "Write resized RGB tensors for an external network");
  std::string pre_split = "all";
  std::size_t side = kTransferSide;
  pre_cmd->add_option("--data", csv)->required();
  pre_cmd->add_option("--split", pre_split, "all | train | val | test")->capture_default_str();
  pre_cmd->add_option("--size", side, "Output side length")->capture_default_str();
  pre_cmd->add_option("--out", out_path)->required();

  auto* ens_cmd = app.add_subcommand("ensemble", "Soft-vote probability files and score them");
  std::vector<std::string> prob_files;
  std::vector<double> weights;
  std::string labels_split = "test", voted_out;
  ens_cmd->add_option("--probs", prob_files, "Probability CSV or checkpoint (repeat per member)")->required();
  ens_cmd->add_option("--weight", weights, "Member weight (repeat; default all 1)");
  ens_cmd->add_option("--data", csv, "FER-2013 CSV providing labels")->required();
  ens_cmd->add_option("--labels", labels_split, "Split providing labels")->capture_default_str();
  ens_cmd->add_option("--out", voted_out, "Write the voted probabilities here");
  ens_cmd->add_option("--batch-size", batch, "Batch size for checkpoint members")->capture_default_str();
  ens_cmd->add_flag("--json", json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    if (*inspect) return detail::cmd_inspect(inspect_csv, inspect_json, out, err);
    if (*train_cmd) return detail::cmd_train(targs, out);
    if (*eval_cmd) {
      auto ck = load_checkpoint<float>(ckpt);
      detail::report(out, evaluate(ck.model, detail::load_split(csv, split), batch), json);
      return 0;
    }
    if (*probs_cmd) {
      auto ck = load_checkpoint<float>(ckpt);
      const ProbMatrix p = predict_probs(ck.model, detail::load_split(csv, split), batch);
      write_prob_csv(p, std::filesystem::path(out_path));
      out << "wrote " << p.rows() << " rows to " << out_path << '\n';
      return 0;
    }
    if (*pre_cmd) {
      const Dataset d = detail::load_split(csv, pre_split);
      export_preprocessed(d, out_path, side);
      out << "wrote " << d.size() << " tensors of shape [3," << side << "," << side << "] to "
          << out_path << '\n';
      return 0;
    }
    if (*ens_cmd) {
      if (weights.empty()) weights.assign(prob_files.size(), 1.0);
      if (weights.size() != prob_files.size()) {
        throw ConfigError("got " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(prob_files.size()) + " probability files");
      }
      const Dataset labels = detail::load_split(csv, labels_split);
      std::vector<EnsembleMember> members;
      for (std::size_t i = 0; i < prob_files.size(); ++i) {
        members.push_back({detail::member_probs(prob_files[i], labels, batch), weights[i]});
      }
      const Metrics m = ensemble_evaluate(members, labels);
      if (!voted_out.empty()) {
        std::vector<ProbMatrix> inputs;
        for (const auto& mem : members) inputs.push_back(mem.probs);
        write_prob_csv(soft_vote(inputs, weights), std::filesystem::path(voted_out));
      }
      detail::report(out, m, json);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace fer
