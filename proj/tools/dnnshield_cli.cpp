// dnnshield command-line entry point. Exit codes: 0 success, 1 domain error,
// 2 usage error. A verification that decides "no" is still a success.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dnnshield/architecture.hpp"
#include "dnnshield/attacks.hpp"
#include "dnnshield/checkpoint.hpp"
#include "dnnshield/data.hpp"
#include "dnnshield/errors.hpp"
#include "dnnshield/kernels.hpp"
#include "dnnshield/training.hpp"
#include "dnnshield/verification.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dnnshield;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "table";
};

struct DataFlags {
  std::string dir;
  std::size_t n_train = 8000;
  std::size_t n_test = 2000;
};

struct TrainFlags {
  int epochs = 10;
  double lr = 0.001;
  std::size_t batch = 64;
  std::string optimizer = "adam";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output file or directory");
  cmd->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "table"}));
}

void add_data(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--data", d.dir, "MNIST IDX directory (default: $DNNSHIELD_DATA_DIR)");
  cmd->add_option("--n-train", d.n_train, "Training samples");
  cmd->add_option("--n-test", d.n_test, "Test samples");
}

void add_train(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--epochs", t.epochs, "Epochs");
  cmd->add_option("--lr", t.lr, "Learning rate");
  cmd->add_option("--batch", t.batch, "Minibatch size");
  cmd->add_option("--optimizer", t.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
}

DataPair load_data(const DataFlags& d, std::uint64_t seed) {
  std::optional<fs::path> dir = d.dir.empty() ? default_data_dir() : std::optional<fs::path>(d.dir);
  DataPair p = load_desk_data(dir, d.n_train, d.n_test, seed);
  if (p.source == "rendered-digits") std::cerr << "note: MNIST files not found, using rendered digits\n";
  return p;
}

TrainConfig make_config(const TrainFlags& t, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = t.epochs;
  c.learning_rate = t.lr;
  c.batch_size = t.batch;
  c.optimizer = optimizer_from_string(t.optimizer);
  c.seed = seed;
  return c;
}

void emit(const Common& c, const json& j, const std::string& table) {
  std::cout << (c.format == "json" ? j.dump(2) : table) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << text;
}

// Keys from a checkpoint, or from a bare key-section file written by protect --keys-out.
KeyRegistry read_keys(const fs::path& path) {
  const Bytes bytes = read_file(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "DNSH")) {
    return parse_key_section(extract_key_section(bytes));
  }
  return parse_key_section(bytes);
}

std::vector<std::size_t> parse_indices(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw UsageError("bad layer index '" + item + "'");
    }
  }
  return out;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// ---- protect ----

struct ProtectArgs {
  Common c;
  std::string arch = "cnn";
  std::string kind = "hadamard";
  std::string placement = "default";
  bool post_activation = false;
  double low = -1.0, high = 1.0;
  std::string keys_out;
};

int run_protect(const ProtectArgs& a) {
  if (a.c.out.empty()) throw UsageError("protect needs --out");
  ArchitectureConfig arch = resolve_architecture(a.arch);
  PlacementPolicy p = arch.protection.value_or(PlacementPolicy{});
  p.kind = protection_kind_from_string(a.kind);
  p.seed = a.c.seed;
  p.low = a.low;
  p.high = a.high;
  p.post_activation = a.post_activation;
  if (a.placement != "default") {
    p.mode = PlacementPolicy::Mode::Explicit;
    p.layer_indices = parse_indices(a.placement);
  }
  ModelGraph model = insert_protection_layers(build_model(arch, a.c.seed), p);
  save_checkpoint(model, a.c.out);
  if (!a.keys_out.empty()) {
    const Bytes keys = serialize_key_section(model.keys());
    write_file(a.keys_out, keys);
  }
  const std::string digest = key_digest(model.keys());
  json j = {{"checkpoint", a.c.out}, {"keys", model.keys().ids()}, {"key_digest", digest},
            {"parameters", model.parameter_count()}, {"key_values", model.key_value_count()}};
  std::string t = "checkpoint  " + a.c.out + "\nkeys        ";
  for (const auto& id : model.keys().ids()) t += id + " ";
  t += "\nkey digest  " + digest;
  emit(a.c, j, t);
  return 0;
}

// ---- train ----

struct TrainArgs {
  Common c;
  DataFlags d;
  TrainFlags t;
  std::string model;
  std::string log;
  std::string checkpoint_dir;
};

int run_train(const TrainArgs& a) {
  if (a.model.empty() || a.c.out.empty()) throw UsageError("train needs --model and --out");
  ModelGraph model = load_checkpoint(a.model);
  DataPair data = load_data(a.d, a.c.seed);
  TrainConfig cfg = make_config(a.t, a.c.seed);
  cfg.eval_set = &data.test;
  const TrainLog log = train(model, data.train, cfg, [&](const EpochRecord& r, const ModelGraph& m) {
    if (!a.checkpoint_dir.empty())
      save_checkpoint(m, fs::path(a.checkpoint_dir) / (m.name() + "_epoch" + std::to_string(r.epoch) + ".dnsh"));
    std::cerr << "epoch " << r.epoch << " loss " << fmt(r.loss) << " train " << fmt(r.train_acc) << " test "
              << fmt(r.eval_acc.value_or(0.0)) << '\n';
  });
  save_checkpoint(model, a.c.out);
  if (!a.log.empty()) write_text(a.log, log.to_csv());
  const auto& last = log.epochs.back();
  json j = {{"checkpoint", a.c.out}, {"data", data.source}, {"epochs", model.epoch()},
            {"train_acc", evaluate(model, data.train)}, {"test_acc", last.eval_acc.value_or(0.0)}};
  emit(a.c, j,
       "trained " + a.c.out + " on " + data.source + "\ntrain_acc " + fmt(j["train_acc"].get<double>()) +
           "\ntest_acc  " + fmt(j["test_acc"].get<double>()));
  return 0;
}

// ---- eval ----

struct EvalArgs {
  Common c;
  DataFlags d;
  std::string model;
};

int run_eval(const EvalArgs& a) {
  if (a.model.empty()) throw UsageError("eval needs --model");
  const ModelGraph model = load_checkpoint(a.model);
  DataPair data = load_data(a.d, a.c.seed);
  const double tr = evaluate(model, data.train), te = evaluate(model, data.test);
  json j = {{"model", model.name()}, {"data", data.source}, {"train_acc", tr}, {"test_acc", te}};
  if (!a.c.out.empty()) write_text(a.c.out, j.dump(2));
  emit(a.c, j, "train_acc " + fmt(tr) + "\ntest_acc  " + fmt(te));
  return 0;
}

// ---- verify ----

struct VerifyArgs {
  Common c;
  std::string reference;
  std::string suspect;
  std::string reference_model;
  std::vector<std::string> extract;  // key:layer[:direction]
  double threshold = kDefaultThreshold;
  std::string direction = "into_preceding";
  bool no_fold = false;
};

int run_verify(const VerifyArgs& a) {
  if (a.reference.empty() || a.suspect.empty()) throw UsageError("verify needs --reference and --suspect");
  const KeyRegistry ref = read_keys(a.reference);
  const ModelGraph suspect = load_checkpoint(a.suspect);
  VerifyOptions opt;
  opt.threshold = a.threshold;
  opt.fold_splits = !a.no_fold;
  std::optional<ModelGraph> owner;
  if (!a.extract.empty()) {
    const std::string owner_path = a.reference_model.empty() ? a.reference : a.reference_model;
    owner = load_checkpoint(owner_path);
    opt.reference_model = &*owner;
    for (const auto& spec : a.extract) {
      const auto p1 = spec.find(':');
      if (p1 == std::string::npos) throw UsageError("--extract expects key:layer[:direction], got '" + spec + "'");
      const auto p2 = spec.find(':', p1 + 1);
      ExtractionRequest req;
      req.key_id = spec.substr(0, p1);
      req.suspect_layer = parse_indices(spec.substr(p1 + 1, p2 == std::string::npos ? std::string::npos : p2 - p1 - 1))
                              .at(0);
      req.direction = merge_direction_from_string(p2 == std::string::npos ? a.direction : spec.substr(p2 + 1));
      opt.extractions.push_back(req);
    }
  }
  const auto report = verify_ownership(ref, suspect, opt);
  const json j = report_to_json(report);
  if (!a.c.out.empty()) write_text(a.c.out, j.dump(2));
  emit(a.c, j, report_to_table(report));
  return 0;
}

// ---- extract-key ----

struct ExtractArgs {
  Common c;
  std::string reference_model;
  std::string suspect;
  std::string key;
  std::size_t layer = 0;
  std::string direction = "into_preceding";
};

int run_extract(const ExtractArgs& a) {
  if (a.reference_model.empty() || a.suspect.empty() || a.key.empty())
    throw UsageError("extract-key needs --reference, --suspect and --key");
  const ModelGraph owner = load_checkpoint(a.reference_model);
  const ModelGraph suspect = load_checkpoint(a.suspect);
  VerifyOptions opt;
  opt.reference_model = &owner;
  opt.extractions = {{a.key, a.layer, merge_direction_from_string(a.direction)}};
  KeyRegistry only;
  only.add(owner.keys().get(a.key));
  const auto report = verify_ownership(only, suspect, opt);
  const auto& e = report.entries.at(0);
  json j = {{"key_id", a.key}, {"layer", a.layer}, {"direction", a.direction}, {"cosine", e.score},
            {"flagged", e.flagged}};
  if (!a.c.out.empty()) write_text(a.c.out, j.dump(2));
  emit(a.c, j, a.key + " from layer " + std::to_string(a.layer) + ": cosine " + fmt(e.score, 6) + " (" +
                   std::to_string(e.flagged) + " flagged)");
  return 0;
}

// ---- attack ----

struct AttackArgs {
  Common c;
  DataFlags d;
  TrainFlags t;
  std::string name;
  std::string model;
  std::string scope = "key_only";
  std::string direction = "into_preceding";
  std::string scenario = "all_params_and_keys";
  std::string key;
  std::string init = "random";
  double lr_factor = 1.0;
  std::size_t trials = 100;
  std::size_t max_values = 100;
  std::size_t values_per_step = 1;
  bool per_tensor = false;
  std::size_t eval_limit = 0;
};

void write_result(const Common& c, const AttackResult& r) {
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  write_text(dir / (r.file_stem() + ".csv"), r.to_csv());
  write_text(dir / (r.file_stem() + ".json"), r.to_json().dump(2));
  if (r.result_model) save_checkpoint(*r.result_model, dir / (r.file_stem() + ".dnsh"));
}

int run_attack(const AttackArgs& a) {
  if (a.model.empty()) throw UsageError("attack needs --model");
  const ModelGraph model = load_checkpoint(a.model);
  const fs::path dir = a.c.out.empty() ? fs::path(".") : fs::path(a.c.out);

  if (a.name == "merge") {
    if (a.key.empty()) throw UsageError("attack merge needs --key");
    const ModelGraph merged = attack_merge_fc(model, a.key, merge_direction_from_string(a.direction));
    const fs::path out = dir / ("merge_" + model.name() + "_" + a.key + ".dnsh");
    save_checkpoint(merged, out);
    emit(a.c, {{"checkpoint", out.string()}, {"layers", merged.num_layers()}}, "merged model " + out.string());
    return 0;
  }
  if (a.name == "conv-merge") {
    json rows = json::array();
    std::string t;
    for (const auto& id : model.keys().ids(ProtectionKind::Hadamard)) {
      std::size_t i = 0;
      while (model.layer(i).desc.key_id != id) ++i;
      if (i == 0 || model.layer(i - 1).desc.kind != LayerKind::Conv2d) continue;
      const auto r = attack_conv_merge_attempt(model.layer(i - 1), model.keys().get(id).hadamard());
      rows.push_back({{"key_id", id}, {"feasible", r.feasible}, {"channel", r.channel}, {"p", r.p}, {"q", r.q}});
      t += id + (r.feasible ? " feasible\n"
                            : " infeasible, channel " + std::to_string(r.channel) + " positions " +
                                  std::to_string(r.p) + "," + std::to_string(r.q) + "\n");
    }
    if (!a.c.out.empty()) write_text(dir / ("conv_merge_" + model.name() + ".json"), rows.dump(2));
    emit(a.c, rows, t.empty() ? "no Hadamard layer follows a convolution" : t);
    return 0;
  }

  DataPair data = load_data(a.d, a.c.seed);
  const AttackData ad{&data.train, &data.test, a.eval_limit, a.eval_limit};
  TrainConfig cfg = make_config(a.t, a.c.seed);
  AttackResult r;
  if (a.name == "random") {
    r = attack_random_key_replace(model, ad, a.trials, a.c.seed);
  } else if (a.name == "incremental") {
    r = attack_incremental_replace(model, ad, a.max_values, a.c.seed, a.values_per_step);
  } else if (a.name == "noise") {
    r = attack_key_noise(model, ad, {}, a.c.seed);
  } else if (a.name == "prune") {
    r = attack_prune(model, ad, prune_scope_from_string(a.scope), default_prune_levels(), a.per_tensor);
  } else if (a.name == "finetune") {
    r = attack_finetune(model, data.test, ad, finetune_scenario_from_string(a.scenario), a.lr_factor, a.t.epochs,
                        cfg);
  } else if (a.name == "substitute") {
    SubstituteOptions o;
    o.epochs = a.t.epochs;
    o.init = a.init == "diagonal" ? SubstituteInit::Diagonal : SubstituteInit::Random;
    if (!a.key.empty()) o.key_ids = {a.key};
    r = attack_substitute_fc(model, data.test, ad, o, cfg);
  } else {
    throw UsageError("unknown attack '" + a.name + "'");
  }
  r.seed = a.c.seed;
  write_result(a.c, r);
  std::string t = "step  train_acc  test_acc  similarity\n";
  for (const auto& rec : r.records)
    t += std::to_string(rec.step) + "  " + fmt(rec.train_acc) + "  " + fmt(rec.test_acc) + "  " +
         fmt(rec.similarity) + "\n";
  t += "summary " + r.summary.dump();
  emit(a.c, r.to_json(), t);
  return 0;
}

// ---- sweep / bench ----

struct SweepArgs {
  Common c;
  DataFlags d;
  TrainFlags t;
  std::string arch = "cnn";
};

int run_sweep(const SweepArgs& a) {
  DataPair data = load_data(a.d, a.c.seed);
  const auto rows = run_placement_sweep(resolve_architecture(a.arch), data.train, data.test,
                                        make_config(a.t, a.c.seed), a.c.seed);
  json j = json::array();
  std::string t = "subset            mean     variance\n";
  for (const auto& r : rows) {
    std::string name;
    for (const auto& id : r.subset) name += (name.empty() ? "" : "+") + id;
    j.push_back({{"subset", r.subset}, {"accuracies", r.accuracies}, {"mean", r.mean}, {"variance", r.variance}});
    t += name + std::string(name.size() < 18 ? 18 - name.size() : 1, ' ') + fmt(r.mean) + "   " +
         fmt(r.variance, 6) + "\n";
  }
  if (!a.c.out.empty()) write_text(a.c.out, j.dump(2));
  emit(a.c, j, t);
  return 0;
}

int run_bench(const SweepArgs& a) {
  DataPair data = load_data(a.d, a.c.seed);
  const auto rep = measure_runtime_overhead(resolve_architecture(a.arch), data.train, make_config(a.t, a.c.seed),
                                            a.c.seed);
  const json j = rep.to_json();
  std::string t = "variant       s/epoch    ratio\n";
  for (const auto& v : rep.variants)
    t += v.name + std::string(14 - std::min<std::size_t>(13, v.name.size()), ' ') + fmt(v.mean, 3) + "   " +
         fmt(v.ratio, 3) + "\n";
  if (!a.c.out.empty()) write_text(a.c.out, j.dump(2));
  emit(a.c, j, t);
  return 0;
}

int dispatch(std::vector<std::string> args);

// ---- report ----

struct ReportArgs {
  Common c;
  std::string manifest;
};

// Manifest: {"steps": [["protect", "--arch", "cnn", ...], ...]}. Runs every
// step in order and stops at the first failure.
int run_report(const ReportArgs& a) {
  if (a.manifest.empty()) throw UsageError("report needs --manifest");
  std::ifstream f(a.manifest);
  if (!f) throw InputError("cannot read manifest " + a.manifest);
  const json m = json::parse(f);
  json done = json::array();
  for (const auto& step : m.at("steps")) {
    std::vector<std::string> argv = step.get<std::vector<std::string>>();
    std::cerr << "report:";
    for (const auto& s : argv) std::cerr << ' ' << s;
    std::cerr << '\n';
    const int rc = dispatch(argv);
    done.push_back({{"step", argv}, {"exit", rc}});
    if (rc != 0) {
      emit(a.c, done, "step failed with exit code " + std::to_string(rc));
      return rc;
    }
  }
  if (!a.c.out.empty()) write_text(a.c.out, done.dump(2));
  emit(a.c, done, std::to_string(done.size()) + " steps completed");
  return 0;
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Protection layers for neural network ownership verification"};
  app.require_subcommand(1);

  ProtectArgs pa;
  auto* protect = app.add_subcommand("protect", "Build a protected, untrained checkpoint");
  add_common(protect, pa.c);
  protect->add_option("--arch", pa.arch, "cnn, fcn or a JSON config");
  protect->add_option("--kind", pa.kind, "hadamard or permutation")->check(CLI::IsMember({"hadamard", "permutation"}));
  protect->add_option("--placement", pa.placement, "default or comma-separated layer indices");
  protect->add_flag("--post-activation", pa.post_activation, "Place after the following activation");
  protect->add_option("--low", pa.low, "Hadamard key lower bound");
  protect->add_option("--high", pa.high, "Hadamard key upper bound");
  protect->add_option("--keys-out", pa.keys_out, "Also write the bare key section here");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a checkpoint");
  add_common(trainc, ta.c);
  add_data(trainc, ta.d);
  add_train(trainc, ta.t);
  trainc->add_option("--model", ta.model, "Input checkpoint");
  trainc->add_option("--log", ta.log, "CSV training log");
  trainc->add_option("--checkpoint-dir", ta.checkpoint_dir, "Save a checkpoint after every epoch");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(evalc, ea.c);
  add_data(evalc, ea.d);
  evalc->add_option("--model", ea.model, "Checkpoint");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Compare reference keys with a suspect model");
  add_common(verify, va.c);
  verify->add_option("--reference", va.reference, "Owner checkpoint or key file");
  verify->add_option("--suspect", va.suspect, "Suspect checkpoint");
  verify->add_option("--reference-model", va.reference_model, "Owner checkpoint for extraction");
  verify->add_option("--extract", va.extract, "key:layer[:direction] extraction request");
  verify->add_option("--threshold", va.threshold, "Decision threshold");
  verify->add_option("--direction", va.direction, "Default merge direction")
      ->check(CLI::IsMember({"into_preceding", "into_following"}));
  verify->add_flag("--no-fold", va.no_fold, "Do not fold split Hadamard layers");

  ExtractArgs xa;
  auto* extract = app.add_subcommand("extract-key", "Recover a key merged into a dense layer");
  add_common(extract, xa.c);
  extract->add_option("--reference", xa.reference_model, "Owner checkpoint");
  extract->add_option("--suspect", xa.suspect, "Suspect checkpoint");
  extract->add_option("--key", xa.key, "Key id");
  extract->add_option("--layer", xa.layer, "Suspect dense layer index");
  extract->add_option("--direction", xa.direction, "Merge direction")
      ->check(CLI::IsMember({"into_preceding", "into_following"}));

  AttackArgs aa;
  auto* attack = app.add_subcommand("attack", "Run one attack and write CSV and JSON results");
  add_common(attack, aa.c);
  add_data(attack, aa.d);
  add_train(attack, aa.t);
  attack->add_option("name", aa.name, "random, incremental, noise, prune, finetune, merge, conv-merge, substitute")
      ->required()
      ->check(CLI::IsMember(
          {"random", "incremental", "noise", "prune", "finetune", "merge", "conv-merge", "substitute"}));
  attack->add_option("--model", aa.model, "Protected checkpoint");
  attack->add_option("--scope", aa.scope, "Pruning scope")->check(CLI::IsMember({"all_params", "key_only"}));
  attack->add_option("--direction", aa.direction, "Merge direction")
      ->check(CLI::IsMember({"into_preceding", "into_following"}));
  attack->add_option("--scenario", aa.scenario, "Fine-tuning scenario")
      ->check(CLI::IsMember({"all_params_and_keys", "keys_only"}));
  attack->add_option("--lr-factor", aa.lr_factor, "Fine-tuning learning-rate factor");
  attack->add_option("--key", aa.key, "Key id (merge, substitute)");
  attack->add_option("--init", aa.init, "Substitution init")->check(CLI::IsMember({"random", "diagonal"}));
  attack->add_option("--trials", aa.trials, "Random key trials");
  attack->add_option("--max-values", aa.max_values, "Incremental replacement: values to replace");
  attack->add_option("--values-per-step", aa.values_per_step, "Incremental replacement: values between measurements")
      ->check(CLI::PositiveNumber);
  attack->add_flag("--per-tensor", aa.per_tensor, "Rank pruning magnitudes per tensor");
  attack->add_option("--eval-limit", aa.eval_limit, "Evaluate on the first N samples of each split");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Placement sweep over every protection subset");
  add_common(sweep, sa.c);
  add_data(sweep, sa.d);
  add_train(sweep, sa.t);
  sweep->add_option("--arch", sa.arch, "cnn, fcn or a JSON config");

  SweepArgs ba;
  ba.t.epochs = 3;
  auto* bench = app.add_subcommand("bench", "Seconds per epoch with and without protection");
  add_common(bench, ba.c);
  add_data(bench, ba.d);
  add_train(bench, ba.t);
  bench->add_option("--arch", ba.arch, "cnn, fcn or a JSON config");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Run every step of an experiment manifest");
  add_common(report, ra.c);
  report->add_option("--manifest", ra.manifest, "Manifest JSON");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*protect) return run_protect(pa);
    if (*trainc) return run_train(ta);
    if (*evalc) return run_eval(ea);
    if (*verify) return run_verify(va);
    if (*extract) return run_extract(xa);
    if (*attack) return run_attack(aa);
    if (*sweep) return run_sweep(sa);
    if (*bench) return run_bench(ba);
    if (*report) return run_report(ra);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const PolicyError& e) {
    std::cerr << "invalid policy: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  dnnshield::kernels::retain_freed_memory();
  try {
    return dispatch(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
