// kgsp: split generation, feasibility scores, training, evaluation and
// synthetic data for compositional zero-shot experiments.

#include <CLI11.hpp>

#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kgsp/commands.hpp"
#include "kgsp/error.hpp"

namespace {

using namespace kgsp;

// Finds "--config FILE" / "--config=FILE" and rewrites argv so that the
// file's key = value pairs come right after the subcommand, before the
// user's own flags. With TakeLast on every option the command line wins.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return args;
  std::vector<std::string> out = {args[0]};
  std::size_t sub = 0;
  if (!rest.empty()) out.push_back(rest[sub++]);
  for (const auto& [key, value] : load_config(*config)) out.push_back("--" + key + "=" + value);
  out.insert(out.end(), rest.begin() + static_cast<std::ptrdiff_t>(sub), rest.end());
  return out;
}

struct Raw {
  std::string manifest, features, embeddings, feasibility, checkpoint, out, metrics;
  std::optional<std::uint64_t> seed;
  std::string mode = "owczsl", pseudo = "off", eval_mode = "both", split = "test";
  std::string method = "knowledge";
  bool mask = false;
  double mask_threshold = 0.0;
  int depth = 3;
  double dropout = 0.5;
  TrainConfig train;
  SynthSpec synth;
};

void add_seed(CLI::App* c, Raw& r) {
  c->add_option("--seed", r.seed, "Random seed (required)")->required();
}

void add_experiment(CLI::App* c, Raw& r) {
  c->add_option("--manifest", r.manifest, "Dataset manifest (TSV)");
  c->add_option("--features", r.features, "Feature matrix (KGSP binary)");
  c->add_option("--feasibility", r.feasibility, "Feasibility matrix file");
  c->add_option("--out", r.out, "Output directory");
  add_seed(c, r);
}

ExperimentConfig to_config(const Raw& r) {
  ExperimentConfig c;
  c.manifest = r.manifest;
  c.features = r.features;
  c.feasibility = r.feasibility;
  c.checkpoint = r.checkpoint;
  c.out = r.out;
  c.train = r.train;
  c.train.mode = parse_train_mode(r.mode);
  c.train.pseudo = parse_pseudo_mode(r.pseudo);
  c.depth = r.depth;
  c.dropout = r.dropout;
  c.eval_mode = parse_eval_mode(r.eval_mode);
  c.eval_split = parse_split(r.split);
  c.mask = r.mask;
  c.mask_threshold = r.mask_threshold;
  c.seed = r.seed;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compositional zero-shot learning with feasibility-guided pseudo-labels"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  std::string config_file;
  app.add_option("--config", config_file, "Flat key = value file; flags override its keys");

  Raw r;

  auto* split = app.add_subcommand("split-pczsl", "Keep one primitive label per training image");
  split->add_option("--manifest", r.manifest, "Fully labeled manifest")->required();
  split->add_option("--out", r.out, "Output manifest path")->required();
  add_seed(split, r);

  auto* feas = app.add_subcommand("feasibility", "Score every composition from word embeddings");
  feas->add_option("--embeddings", r.embeddings, "Text embedding file")->required();
  feas->add_option("--manifest", r.manifest, "Manifest (vocabulary and seen set)")->required();
  feas->add_option("--method", r.method, "knowledge | compcos")
      ->check(CLI::IsMember({"knowledge", "compcos"}));
  feas->add_option("--out", r.out, "Output matrix path")->required();

  auto* train = app.add_subcommand("train", "Train the state and object classifiers");
  add_experiment(train, r);
  train->add_option("--mode", r.mode, "owczsl | pczsl")->check(CLI::IsMember({"owczsl", "pczsl"}));
  train->add_option("--pseudo", r.pseudo, "off | vanilla | kg")
      ->check(CLI::IsMember({"off", "vanilla", "kg"}));
  train->add_option("--epochs", r.train.epochs);
  train->add_option("--batch-size", r.train.batch_size);
  train->add_option("--lr", r.train.lr);
  train->add_option("--weight-decay", r.train.weight_decay);
  train->add_option("--vanilla-threshold", r.train.vanilla_threshold);
  train->add_option("--warmup-epochs", r.train.warmup_epochs);
  train->add_option("--entropy-weight", r.train.entropy_weight);
  train->add_option("--depth", r.depth, "Linear layers per head (1-5)");
  train->add_option("--dropout", r.dropout);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_experiment(eval, r);
  eval->add_option("--checkpoint", r.checkpoint, "Model checkpoint")->required();
  eval->add_flag("--mask,!--no-mask", r.mask, "Restrict predictions to feasible compositions");
  eval->add_option("--mask-threshold", r.mask_threshold);
  eval->add_option("--eval-mode", r.eval_mode, "biased | unbiased | both")
      ->check(CLI::IsMember({"biased", "unbiased", "both"}));
  eval->add_option("--split", r.split, "train | val | test");
  // Accepted so one config file can drive both train and eval.
  for (const char* ignored : {"--mode", "--pseudo", "--epochs", "--batch-size", "--lr",
                              "--weight-decay", "--vanilla-threshold", "--warmup-epochs",
                              "--entropy-weight", "--depth", "--dropout"})
    eval->add_option(ignored)->group("");
  for (const char* ignored : {"--mask", "--mask-threshold", "--eval-mode", "--split",
                              "--checkpoint"})
    train->add_option(ignored)->group("");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with known answers");
  auto& s = r.synth;
  synth->add_option("--states", s.n_states);
  synth->add_option("--objects", s.n_objects);
  synth->add_option("--pad-objects", s.pad_objects, "Object names without any image");
  synth->add_option("--state-dim", s.state_dim);
  synth->add_option("--object-dim", s.object_dim);
  synth->add_option("--noise", s.noise);
  synth->add_option("--signal", s.signal);
  synth->add_option("--seen", s.n_seen);
  synth->add_option("--train-per-seen", s.train_per_seen);
  synth->add_option("--val-per-comp", s.val_per_comp);
  synth->add_option("--test-per-comp", s.test_per_comp);
  synth->add_option("--out", r.out, "Output directory")->required();
  add_seed(synth, r);

  auto* report = app.add_subcommand("report", "Print a metrics CSV as a table");
  report->add_option("metrics", r.metrics, "Metrics CSV")->required();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    // Help and version requests exit 0; every usage error is invalid input.
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*split) {
      cmd_split_pczsl(r.manifest, *r.seed, r.out, std::cout);
    } else if (*feas) {
      cmd_feasibility(r.embeddings, r.manifest, r.method, r.out, std::cout);
    } else if (*train) {
      cmd_train(to_config(r), std::cout);
    } else if (*eval) {
      cmd_eval(to_config(r), std::cout);
    } else if (*synth) {
      s.seed = *r.seed;
      cmd_synth(s, r.out, std::cout);
    } else if (*report) {
      cmd_report(r.metrics, std::cout);
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
