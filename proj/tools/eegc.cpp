// eegc: single-channel EEG completion toolkit.
//
// Subcommands: ingest, grid, train, eval, complete.
// Exit codes: 0 success, 1 usage, 2 data error, 3 training divergence.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eegc/errors.hpp"
#include "eegc/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out_dir = "out";
  std::string store;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double alpha = 0.0;
  bool alpha_set = false;
  int cascade_flag = -1;  // -1 unset, 0 off, 1 on
  bool sequential = false;
};

std::string store_path(const CommonArgs& args) {
  return args.store.empty() ? args.out_dir + "/segments.store" : args.store;
}

eegc::ExperimentSpec load_spec_with_overrides(const CommonArgs& args) {
  if (args.config.empty()) throw eegc::DataError("--config is required");
  auto spec = eegc::load_spec(args.config);
  if (args.seed_set) spec.seed = args.seed;
  if (args.alpha_set) {
    spec.alphas.insert(spec.alphas.begin(), args.alpha);
    spec.train.alpha = args.alpha;
  }
  if (args.cascade_flag >= 0) spec.cascade = args.cascade_flag == 1;
  if (args.sequential) spec.train.sequential = true;
  return spec;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_model_flags) {
  cmd->add_option("--config", args.config, "experiment config (JSON)");
  cmd->add_option("--out-dir", args.out_dir, "output directory");
  cmd->add_option("--store", args.store,
                  "segment store (default <out-dir>/segments.store)");
  cmd->add_option("--seed", args.seed, "override the experiment seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  if (with_model_flags) {
    cmd->add_option("--alpha", args.alpha, "override the loss weighting factor")
        ->each([&args](const std::string&) { args.alpha_set = true; });
    auto* on = cmd->add_flag("--cascade", "force the two-stage cascade");
    auto* off = cmd->add_flag("--no-cascade", "force the single-stage model");
    cmd->parse_complete_callback([&args, on, off] {
      if (on->count()) args.cascade_flag = 1;
      if (off->count()) args.cascade_flag = 0;
    });
    cmd->add_flag("--sequential", args.sequential,
                  "train stage 1 to convergence before stage 2");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-channel EEG completion toolkit"};
  app.require_subcommand(1);

  CommonArgs ingest_args, grid_args, train_args, eval_args;
  bool skip_bad = false;
  std::string eval_checkpoint;

  auto* ingest = app.add_subcommand("ingest", "parse EDF files into a segment store");
  add_common(ingest, ingest_args, false);
  ingest->add_flag("--skip-bad", skip_bad, "keep going past unreadable files");

  auto* grid = app.add_subcommand("grid", "train and evaluate the experiment grid");
  add_common(grid, grid_args, true);

  auto* train = app.add_subcommand("train", "train one setting from the config");
  add_common(train, train_args, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_args, true);
  eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();

  eegc::CompleteOptions complete_opts;
  std::string complete_position = "middle";
  std::string complete_method = "zero";
  std::string complete_indices;
  auto* complete = app.add_subcommand("complete", "fill a masked segment from a checkpoint");
  complete->add_option("--checkpoint", complete_opts.checkpoint, "model checkpoint")
      ->required();
  complete->add_option("--input", complete_opts.input_path,
                       "signal file, one sample per line")
      ->required();
  complete->add_option("--out", complete_opts.out_prefix,
                       "output prefix (.txt/.csv/.mask.json)")
      ->required();
  complete->add_option("--missing-count", complete_opts.missing_count,
                       "number of missing samples");
  complete->add_option("--position", complete_position,
                       "beginning|middle|ending");
  complete->add_option("--mask-method", complete_method, "zero|random|eeg");
  complete->add_option("--missing-indices", complete_indices,
                       "explicit comma-separated indices (overrides count/position)");
  complete->add_option("--mask-seed", complete_opts.mask_seed,
                       "seed for random mask values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      const auto spec = load_spec_with_overrides(ingest_args);
      const auto summary = eegc::cmd_ingest(spec, ingest_args.out_dir, skip_bad);
      std::cout << "ingested " << summary.files_ok << " file(s), "
                << summary.segments << " segment(s)\n";
      for (const auto& err : summary.file_errors)
        std::cerr << "skipped: " << err << '\n';
    } else if (*grid) {
      const auto spec = load_spec_with_overrides(grid_args);
      eegc::cmd_grid(spec, store_path(grid_args), grid_args.out_dir);
      std::cout << "grid results written to " << grid_args.out_dir << '\n';
    } else if (*train) {
      const auto spec = load_spec_with_overrides(train_args);
      eegc::cmd_train(spec, store_path(train_args), train_args.out_dir);
      std::cout << "model written to " << train_args.out_dir << "/model.eegc\n";
    } else if (*eval) {
      const auto spec = load_spec_with_overrides(eval_args);
      eegc::cmd_eval(spec, store_path(eval_args), eval_checkpoint,
                     eval_args.out_dir);
      std::cout << "metrics written to " << eval_args.out_dir << '\n';
    } else if (*complete) {
      complete_opts.position = eegc::position_from_string(complete_position);
      complete_opts.method = eegc::method_from_string(complete_method);
      if (!complete_indices.empty()) {
        std::string token;
        for (size_t i = 0; i <= complete_indices.size(); ++i) {
          if (i == complete_indices.size() || complete_indices[i] == ',') {
            if (!token.empty())
              complete_opts.explicit_indices.push_back(std::stoi(token));
            token.clear();
          } else {
            token += complete_indices[i];
          }
        }
      }
      eegc::cmd_complete(complete_opts);
      std::cout << "completion written to " << complete_opts.out_prefix
                << ".txt\n";
    }
  } catch (const eegc::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const eegc::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
