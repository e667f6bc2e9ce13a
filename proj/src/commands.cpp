#include "kgsp/commands.hpp"

#include <cstdio>
#include <ostream>

#include "kgsp/error.hpp"
#include "kgsp/eval.hpp"
#include "kgsp/feasibility.hpp"
#include "kgsp/model.hpp"

namespace kgsp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string comp_name(const Vocabulary& v, Composition c) {
  return v.states()[c.state] + " " + v.objects()[c.object];
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::uint64_t require_seed(const ExperimentConfig& c) {
  if (!c.seed) throw DomainError("a seed is required (--seed)");
  return *c.seed;
}

void check_feasibility_shape(const FeasibilityMatrix& f, const Vocabulary& v,
                             const fs::path& path) {
  if (f.n_states() != v.n_states() || f.n_objects() != v.n_objects())
    throw DomainError(path.string() + ": feasibility matrix is " + std::to_string(f.n_states()) +
                      "x" + std::to_string(f.n_objects()) + ", vocabulary is " +
                      std::to_string(v.n_states()) + "x" + std::to_string(v.n_objects()));
}

}  // namespace

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kBiased: return "biased";
    case EvalMode::kUnbiased: return "unbiased";
    case EvalMode::kBoth: return "both";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "biased") return EvalMode::kBiased;
  if (s == "unbiased") return EvalMode::kUnbiased;
  if (s == "both") return EvalMode::kBoth;
  throw DomainError("unknown evaluation mode '" + s + "' (biased|unbiased|both)");
}

std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text,
                                                              const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DomainError(source + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty())
      throw DomainError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> load_config(const fs::path& path) {
  return parse_config(read_file(path), path.string());
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw IoError(what + " path not given");
  if (!fs::exists(path)) throw IoError(what + " not found: " + path.string());
}

void cmd_split_pczsl(const fs::path& manifest_path, std::uint64_t seed, const fs::path& out,
                     std::ostream& log) {
  require_file(manifest_path, "manifest");
  const DatasetManifest m = load_manifest(manifest_path);
  const DatasetManifest p = make_pczsl_split(m, seed);

  std::size_t state_only = 0, object_only = 0;
  std::vector<std::size_t> per_state(p.vocab.n_states()), per_object(p.vocab.n_objects());
  for (const auto* r : p.split(Split::kTrain)) {
    if (r->state) {
      ++state_only;
      ++per_state[*r->state];
    } else {
      ++object_only;
      ++per_object[*r->object];
    }
  }
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_manifest(p, out);

  auto min_of = [](const std::vector<std::size_t>& v) {
    std::size_t m = v.empty() ? 0 : v[0];
    for (auto x : v) m = std::min(m, x);
    return m;
  };
  log << "train records: " << state_only + object_only << " (state-only " << state_only
      << ", object-only " << object_only << ")\n"
      << "states covered: " << p.vocab.n_states() << "/" << p.vocab.n_states()
      << ", fewest records for a state: " << min_of(per_state) << "\n"
      << "objects covered: " << p.vocab.n_objects() << "/" << p.vocab.n_objects()
      << ", fewest records for an object: " << min_of(per_object) << "\n"
      << "wrote " << out.string() << "\n";
}

void cmd_feasibility(const fs::path& embeddings, const fs::path& manifest_path,
                     const std::string& method, const fs::path& out, std::ostream& log) {
  if (method != "knowledge" && method != "compcos")
    throw DomainError("unknown feasibility method '" + method + "' (knowledge|compcos)");
  require_file(manifest_path, "manifest");
  require_file(embeddings, "embeddings");
  const DatasetManifest m = load_manifest(manifest_path);
  if (method == "compcos" && m.seen.empty())
    throw DomainError(manifest_path.string() +
                      ": compcos feasibility needs seen compositions, manifest has none");
  const EmbeddingTable emb = load_embeddings(embeddings, m.vocab);
  const FeasibilityMatrix f = method == "knowledge"
                                  ? knowledge_feasibility(emb, m.vocab)
                                  : compcos_feasibility(emb, m.vocab, m.seen);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_feasibility(f, out);

  const auto& rep = emb.report();
  log << "embeddings: dim " << emb.dim() << ", " << rep.direct << " direct, " << rep.underscore
      << " underscore-joined, " << rep.averaged << " averaged\n";
  std::size_t accepted = 0;
  for (double x : f.scores()) accepted += x > 0.0;
  log << "feasible at threshold 0: " << accepted << "/" << f.scores().size() << "\n";
  log << "most feasible:\n";
  for (const auto& r : top_compositions(f, 5, true))
    log << "  " << fixed(r.score) << "  " << comp_name(m.vocab, r.comp) << "\n";
  log << "least feasible:\n";
  for (const auto& r : top_compositions(f, 5, false))
    log << "  " << fixed(r.score) << "  " << comp_name(m.vocab, r.comp) << "\n";
  log << "wrote " << out.string() << "\n";
}

void cmd_train(const ExperimentConfig& c, std::ostream& log) {
  const std::uint64_t seed = require_seed(c);
  require_file(c.manifest, "manifest");
  require_file(c.features, "features");
  if (!c.feasibility.empty()) require_file(c.feasibility, "feasibility");
  if (c.out.empty()) throw IoError("output directory not given");

  TrainConfig tc = c.train;
  tc.seed = seed;
  validate(tc);
  const DatasetManifest m = load_manifest(c.manifest);
  const FeatureStore features = load_features(c.features);
  check_feature_rows(m, features.n_rows);
  std::optional<FeasibilityMatrix> f;
  if (!c.feasibility.empty()) {
    f = load_feasibility(c.feasibility);
    check_feasibility_shape(*f, m.vocab, c.feasibility);
  }

  ModelConfig mc;
  mc.input_dim = features.dim;
  mc.n_states = m.vocab.n_states();
  mc.n_objects = m.vocab.n_objects();
  mc.hidden = hidden_widths_for_depth(c.depth);
  mc.dropout = c.dropout;
  Rng init = Rng::stream(seed, "init");
  KgSpModel model(mc, init);

  const TrainResult result = train(model, m, features, tc, f ? &*f : nullptr);

  ensure_dir(c.out);
  save_checkpoint(model, m.vocab, c.out / "model.kgsm");
  write_file(c.out / "train_log.csv", format_epoch_log(result.log));
  if (!result.log.empty()) {
    const auto& a = result.log.front();
    const auto& b = result.log.back();
    log << "epochs: " << result.log.size() << "\n"
        << "loss_state: " << fixed(a.loss_state) << " -> " << fixed(b.loss_state) << "\n"
        << "loss_obj: " << fixed(a.loss_obj) << " -> " << fixed(b.loss_obj) << "\n";
  }
  log << "wrote " << (c.out / "model.kgsm").string() << "\n";
}

void cmd_eval(const ExperimentConfig& c, std::ostream& log) {
  require_seed(c);
  require_file(c.checkpoint, "checkpoint");
  require_file(c.manifest, "manifest");
  require_file(c.features, "features");
  if (c.mask) require_file(c.feasibility, "feasibility");
  if (c.out.empty()) throw IoError("output directory not given");

  const Checkpoint ck = load_checkpoint(c.checkpoint);
  const DatasetManifest m = load_manifest(c.manifest);
  if (!(ck.vocab == m.vocab))
    throw DomainError("checkpoint/vocabulary mismatch: " + c.checkpoint.string() +
                      " was trained on a different vocabulary than " + c.manifest.string());
  const FeatureStore features = load_features(c.features);
  check_feature_rows(m, features.n_rows);
  if (features.dim != ck.model.config().input_dim)
    throw DomainError(c.features.string() + ": feature dim " + std::to_string(features.dim) +
                      " does not match checkpoint input dim " +
                      std::to_string(ck.model.config().input_dim));

  std::optional<FeasibilityMask> mask;
  if (c.mask) {
    const FeasibilityMatrix f = load_feasibility(c.feasibility);
    check_feasibility_shape(f, m.vocab, c.feasibility);
    mask = feasibility_mask(f, c.mask_threshold);
    log << "mask: " << mask->count() << "/" << m.vocab.n_compositions() << " feasible\n";
  }

  const auto records = m.split(c.eval_split);
  if (records.empty()) throw DomainError(c.manifest.string() + ": no " +
                                         to_string(c.eval_split) + " records");
  const ScoredSet scored = score_records(ck.model, features, records);
  const FeasibilityMask* mp = mask ? &*mask : nullptr;

  ensure_dir(c.out);
  auto emit = [&](const MetricsReport& r, const std::string& name) {
    write_file(c.out / ("metrics_" + name + ".csv"), format_metrics_csv(r));
    const std::string table = format_metrics_table(r);
    write_file(c.out / ("metrics_" + name + ".txt"), table);
    log << table;
  };
  if (c.eval_mode != EvalMode::kUnbiased) emit(evaluate_biased(scored, m.seen, mp), "biased");
  if (c.eval_mode != EvalMode::kBiased) emit(evaluate_unbiased(scored, m.seen, mp), "unbiased");
}

void cmd_synth(const SynthSpec& spec, const fs::path& out, std::ostream& log) {
  if (out.empty()) throw IoError("output directory not given");
  const SynthData d = make_synthetic(spec);
  ensure_dir(out);
  save_manifest(d.manifest, out / "manifest.tsv");
  save_features(d.features, out / "features.bin");
  save_feasibility(d.oracle, out / "feasibility.txt");
  log << "vocabulary: " << d.manifest.vocab.n_states() << " states x "
      << d.manifest.vocab.n_objects() << " objects\n"
      << "seen compositions: " << d.manifest.seen.size() << "\n"
      << "records: " << d.manifest.records.size() << ", feature dim " << d.features.dim << "\n"
      << "wrote " << out.string() << "\n";
}

void cmd_report(const fs::path& metrics, std::ostream& log) {
  require_file(metrics, "metrics");
  log << format_metrics_table(parse_metrics_csv(read_file(metrics)));
}

}  // namespace kgsp
