// mvnn: corpus generation, splitting, feature extraction, training,
// evaluation, ablation and prediction from one binary.
//
// stdout carries only machine-readable results; progress goes to stderr.

#include <malloc.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvnn/checkpoint.hpp"
#include "mvnn/data.hpp"
#include "mvnn/errors.hpp"
#include "mvnn/synth.hpp"
#include "mvnn/train.hpp"

using namespace mvnn;
using Json = nlohmann::ordered_json;

namespace {

struct TrainFlags {
  std::string profile = "desk";
  std::string model_config;
  TrainConfig train;
};

void add_train_flags(CLI::App& cmd, TrainFlags& f) {
  cmd.add_option("--profile", f.profile, "Layer sizes: desk (32 px pixel input) or reference")
      ->check(CLI::IsMember({"desk", "reference"}));
  cmd.add_option("--model-config", f.model_config, "JSON file overriding layer sizes");
  cmd.add_option("--lr", f.train.learning_rate, "Adam learning rate");
  cmd.add_option("--batch-size", f.train.batch_size, "Samples per optimizer step");
  cmd.add_option("--micro-batch", f.train.micro_batch,
                 "Samples per forward pass, gradients accumulated (0 = whole batch)");
  cmd.add_option("--epochs", f.train.max_epochs, "Maximum joint-training epochs");
  cmd.add_option("--patience", f.train.patience, "Early-stopping patience in epochs");
  cmd.add_option("--pretrain-epochs", f.train.pretrain_epochs, "Epochs per sub-network pretraining");
  cmd.add_flag("!--no-augment", f.train.augment, "Disable flip/crop augmentation");
}

ModelConfig resolve_model_config(const TrainFlags& f) {
  if (!f.model_config.empty()) {
    std::ifstream in(f.model_config);
    if (!in) throw IngestError("cannot open " + f.model_config);
    std::stringstream text;
    text << in.rdbuf();
    return parse_model_config(text.str());
  }
  return f.profile == "reference" ? ModelConfig::reference() : ModelConfig::desk();
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad ratio '" + item + "'");
    }
  }
  if (out.size() != 3) throw ConfigError("--ratios needs three comma-separated values");
  return out;
}

void log_epoch(const EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss
            << "  acc " << r.val_accuracy << "  (" << r.seconds << " s)\n";
}

TrainData prepare_training(const Manifest& m, const ModelConfig& mc, bool freq, bool pixel) {
  std::cerr << "decoding training and validation images\n";
  TrainData data;
  data.train = prepare(m, Split::Train, mc.pixel.input_size, freq, pixel);
  data.val = prepare(m, Split::Val, mc.pixel.input_size, freq, pixel);
  return data;
}

int cmd_synth(const std::string& out, int n, std::uint64_t seed, const SynthKnobs& knobs) {
  const Manifest m = synth_corpus(out, n, seed, knobs);
  Json j;
  j["manifest"] = (std::filesystem::path(out) / "manifest.jsonl").string();
  j["records"] = m.records.size();
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_split(const std::string& manifest_path, const std::string& out, int clusters,
              const std::string& ratios, std::uint64_t seed, bool recluster) {
  Manifest m = Manifest::read(manifest_path);
  SplitSpec spec;
  const auto r = parse_ratios(ratios);
  std::copy(r.begin(), r.end(), spec.ratios.begin());
  spec.n_clusters = clusters;
  spec.seed = seed;
  spec.validate();

  std::vector<int> assignment;
  std::vector<std::size_t> need;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (recluster) m.records[i].event_id.reset();
    if (!m.records[i].event_id) need.push_back(i);
  }
  if (!need.empty()) {
    std::cerr << "clustering " << need.size() << " records without an event_id\n";
    RowMatrix points;
    for (std::size_t k = 0; k < need.size(); ++k) {
      const Vector f = event_feature(read_image(m.resolve(m.records[need[k]])));
      if (k == 0) points.resize(static_cast<Index>(need.size()), f.size());
      points.row(static_cast<Index>(k)) = f.transpose();
    }
    const int k = std::min<int>(clusters, static_cast<int>(need.size()));
    const KMeansResult km = kmeans(points, k, seed);
    assignment.assign(m.records.size(), -1);
    for (std::size_t k2 = 0; k2 < need.size(); ++k2) assignment[need[k2]] = km.assignments[k2];
  }
  const SplitReport report = event_split(m, spec, assignment);
  for (const std::string& w : report.warnings) std::cerr << "warning: " << w << '\n';
  m.write(out.empty() ? std::filesystem::path(manifest_path) : std::filesystem::path(out));
  Json j;
  j["events"] = report.events;
  j["counts"] = {{"train", report.counts[0]}, {"val", report.counts[1]}, {"test", report.counts[2]}};
  j["ratios"] = {{"train", report.ratios[0]}, {"val", report.ratios[1]}, {"test", report.ratios[2]}};
  j["warnings"] = report.warnings;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_extract(const std::string& manifest_path, const std::string& split,
                const std::string& out, const std::string& format, const std::string& sampling) {
  const Manifest m = Manifest::read(manifest_path);
  std::vector<std::size_t> records;
  if (split.empty()) {
    records.resize(m.records.size());
    std::iota(records.begin(), records.end(), std::size_t{0});
  } else {
    records = m.indices(parse_split(split));
  }
  const auto mode = sampling == "linear" ? freq::Sampling::Linear : freq::Sampling::Stride;
  std::vector<freq::FreqFeatures> feats;
  std::vector<std::string> paths;
  for (std::size_t i : records) {
    feats.push_back(freq::extract(read_image(m.resolve(m.records[i])), mode));
    paths.push_back(m.records[i].path);
  }
  std::ofstream file;
  if (!out.empty()) {
    file.open(out, std::ios::binary);
    if (!file) throw IngestError("cannot write " + out);
  }
  std::ostream& sink = out.empty() ? std::cout : file;
  if (format == "binary") {
    if (out.empty()) throw UsageError("--format binary needs --out");
    write_freq_binary(sink, feats);
  } else {
    write_freq_jsonl(sink, paths, feats);
  }
  if (!out.empty()) {
    Json j;
    j["features"] = feats.size();
    j["out"] = out;
    std::cout << j.dump() << '\n';
  }
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& ablation, std::uint64_t seed,
              const std::string& out, const std::string& log_path, TrainFlags flags) {
  const Manifest m = Manifest::read(manifest_path);
  m.validate();
  const ModelConfig mc = resolve_model_config(flags);
  const Ablation variant = parse_ablation(ablation);
  flags.train.seed = seed;
  flags.train.validate();
  const TrainData data = prepare_training(m, mc, uses_freq(variant), uses_pixel(variant));

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IngestError("cannot write " + log_path);
  }
  MvnnModel model(mc, variant, seed);
  const TrainResult r = fit(model, data, flags.train, [&](const EpochRecord& e) {
    log_epoch(e);
    if (log) log << e.to_json() << '\n' << std::flush;
  });
  save_checkpoint(out, model, flags.train);
  Json j;
  j["checkpoint"] = out;
  j["epochs"] = r.history.size();
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  j["stopped_early"] = r.stopped_early;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Manifest m = Manifest::read(manifest_path);
  const Ablation a = ck.model.ablation();
  const PreparedSet set = prepare(m, parse_split(split), ck.model.config().pixel.input_size,
                                  uses_freq(a), uses_pixel(a));
  const Evaluation ev = evaluate(ck.model, set);
  std::cout << ev.metrics.to_json() << '\n';
  return 0;
}

int cmd_ablate(const std::string& manifest_path, std::uint64_t seed,
               std::vector<std::string> variants, const std::string& format, TrainFlags flags) {
  const Manifest m = Manifest::read(manifest_path);
  m.validate();
  const ModelConfig mc = resolve_model_config(flags);
  flags.train.seed = seed;
  flags.train.validate();
  std::vector<Ablation> list;
  for (const std::string& v : variants) list.push_back(parse_ablation(v));
  if (list.empty()) list.assign(kAllAblations.begin(), kAllAblations.end());
  const TrainData data = prepare_training(m, mc, true, true);
  const PreparedSet test = prepare(m, Split::Test, mc.pixel.input_size, true, true);
  std::vector<AblationRow> rows;
  for (Ablation v : list) {
    std::cerr << "variant " << to_string(v) << '\n';
    MvnnModel model(mc, v, seed);
    const TrainResult r = fit(model, data, flags.train, log_epoch);
    rows.push_back({v, evaluate(model, test).metrics, static_cast<int>(r.history.size())});
  }
  std::cout << (format == "text" ? ablation_table_text(rows) : ablation_table_json(rows) + "\n");
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& manifest_path,
                const std::string& split, const std::vector<std::string>& images) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  Manifest m;
  if (!manifest_path.empty()) m = Manifest::read(manifest_path);
  std::vector<std::size_t> records;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (split.empty() || m.records[i].split == parse_split(split)) records.push_back(i);
  }
  for (const std::string& path : images) {
    m.records.push_back({std::filesystem::absolute(path).string(), 0, std::nullopt, std::nullopt});
    records.push_back(m.records.size() - 1);
  }
  if (records.empty()) throw UsageError("predict needs --manifest or image paths");
  const Ablation a = ck.model.ablation();
  const PreparedSet set = prepare(m, records, ck.model.config().pixel.input_size,
                                  uses_freq(a), uses_pixel(a));
  const Evaluation ev = evaluate(ck.model, set);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const FusedOutput& o = ev.outputs[i];
    Json j;
    j["path"] = set.samples[i].path;
    j["p_fake"] = o.p[1];
    j["label"] = o.predicted_label;
    if (o.alphas) {
      j["alphas"] = std::vector<double>(o.alphas->data(), o.alphas->data() + o.alphas->size());
    } else {
      j["alphas"] = nullptr;
    }
    std::cout << j.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep freed activation buffers in the heap instead of unmapping them;
  // training allocates and releases the same large sizes every step.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"MVNN multi-domain fake-news image classifier"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string manifest, out, extract_split, checkpoint, format, log, sampling = "stride", ratios = "0.7,0.1,0.2";
  int n = 100, clusters = 200;
  bool recluster = false;
  SynthKnobs knobs;
  TrainFlags train_flags;
  std::string ablation = "full";
  std::vector<std::string> variants, images;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired corpus");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--n", n, "Images per class");
  synth->add_option("--seed", seed);
  synth->add_flag("--knob-recompress", knobs.recompress, "Double-compress fake images");
  synth->add_flag("--knob-striking", knobs.striking, "Saturate fake images");
  synth->add_option("--size", knobs.size, "Image side in pixels");
  synth->add_option("--scenes-per-event", knobs.scenes_per_event);

  auto* split_cmd = app.add_subcommand("split", "Assign event-disjoint train/val/test splits");
  split_cmd->add_option("--manifest", manifest)->required();
  split_cmd->add_option("--out", out, "Output manifest (default: rewrite --manifest)");
  split_cmd->add_option("--clusters", clusters, "k for records without an event_id");
  split_cmd->add_option("--ratios", ratios, "train,val,test");
  split_cmd->add_option("--seed", seed);
  split_cmd->add_flag("--recluster", recluster, "Ignore stored event_ids and cluster all records");

  auto* extract = app.add_subcommand("extract-freq", "Write 64x250 frequency features");
  extract->add_option("--manifest", manifest)->required();
  extract->add_option("--split", extract_split)->check(CLI::IsMember({"train", "val", "test"}));
  extract->add_option("--out", out, "Output file (default: stdout, json only)");
  format = "json";
  extract->add_option("--format", format)->check(CLI::IsMember({"json", "binary"}));
  extract->add_option("--sampling", sampling)->check(CLI::IsMember({"stride", "linear"}));

  auto* train = app.add_subcommand("train", "Pretrain and jointly train one variant");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--ablation", ablation);
  train->add_option("--seed", seed);
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--log", log, "Epoch log (JSON lines)");
  add_train_flags(*train, train_flags);

  auto* eval = app.add_subcommand("eval", "Metrics of a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  std::string eval_split = "test";
  eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* ablate = app.add_subcommand("ablate", "Train and test every ablation variant");
  ablate->add_option("--manifest", manifest)->required();
  ablate->add_option("--seed", seed);
  ablate->add_option("--variants", variants, "Subset of variants")->delimiter(',');
  std::string table_format = "json";
  ablate->add_option("--format", table_format)->check(CLI::IsMember({"json", "text"}));
  add_train_flags(*ablate, train_flags);

  auto* predict = app.add_subcommand("predict", "Per-image fake probability and attention");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--manifest", manifest);
  std::string predict_split;
  predict->add_option("--split", predict_split)->check(CLI::IsMember({"train", "val", "test"}));
  predict->add_option("images", images, "Image files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(out, n, seed, knobs);
    if (*split_cmd) return cmd_split(manifest, out, clusters, ratios, seed, recluster);
    if (*extract) return cmd_extract(manifest, extract_split, out, format, sampling);
    if (*train) return cmd_train(manifest, ablation, seed, out, log, train_flags);
    if (*eval) return cmd_eval(checkpoint, manifest, eval_split);
    if (*ablate) return cmd_ablate(manifest, seed, variants, table_format, train_flags);
    if (*predict) return cmd_predict(checkpoint, manifest, predict_split, images);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
