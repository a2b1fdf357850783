#include "vstain/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <utility>

#include "vstain/errors.hpp"
#include "vstain/infer.hpp"
#include "vstain/masking.hpp"

namespace vstain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One traversal of the configuration drives both directions, so the echo
// and the parser cannot drift apart.
struct Writer {
  json& j;

  template <typename T>
  void field(const char* key, const T& v) {
    j[key] = v;
  }
  void field(const char* key, const train::Variant& v) { j[key] = train::to_string(v); }
  void field(const char* key, const nets::GeneratorKind& v) { j[key] = nets::to_string(v); }
  template <typename F>
  void section(const char* key, F&& body) {
    Writer w{j[key]};
    w.j = json::object();
    body(w);
  }
};

struct Reader {
  const json& j;
  std::string path;
  std::set<std::string> seen;

  Reader(const json& obj, std::string where) : j(obj), path(std::move(where)) {
    if (!j.is_object()) throw ConfigError(label() + " must be an object");
  }

  std::string label() const { return path.empty() ? "config" : path; }
  std::string key_label(const char* key) const { return path.empty() ? key : path + "." + key; }

  template <typename T>
  void field(const char* key, T& v) {
    seen.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
      v = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key_label(key) + " has the wrong type");
    }
    if constexpr (std::is_unsigned_v<T>) {
      if (it->is_number_integer() && it->template get<long long>() < 0) {
        throw ConfigError(key_label(key) + " must be non-negative");
      }
    }
  }
  void field(const char* key, train::Variant& v) {
    std::string s = train::to_string(v);
    field(key, s);
    v = train::parse_variant(s);
  }
  void field(const char* key, nets::GeneratorKind& v) {
    std::string s = nets::to_string(v);
    field(key, s);
    v = nets::parse_generator_kind(s);
  }
  template <typename F>
  void section(const char* key, F&& body) {
    seen.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) return;
    Reader r(*it, key_label(key));
    body(r);
    r.finish();
  }
  void finish() const {
    for (const auto& [k, _] : j.items()) {
      if (!seen.count(k)) throw ConfigError("unknown key '" + key_label(k.c_str()) + "'");
    }
  }
};

template <typename IO, typename Config>
void visit(IO& io, Config& c) {
  io.field("seed", c.seed);
  io.section("paths", [&](auto& s) {
    s.field("manifest", c.manifest);
    s.field("out", c.out);
    s.field("checkpoint", c.checkpoint);
    s.field("input", c.input);
    s.field("folds", c.folds);
  });
  io.field("fold", c.fold);
  io.field("volume", c.volume);
  io.field("invert_ct", c.invert_ct);
  io.field("resume", c.resume);
  io.section("phantom", [&](auto& s) {
    auto& b = c.phantom.base;
    s.field("count", c.phantom.count);
    s.field("ratio", c.phantom.ratio);
    s.field("stack_depth", c.phantom.stack_depth);
    s.field("width", b.width);
    s.field("height", b.height);
    s.field("patch_size", b.patch_size);
    s.field("bone_radius", b.bone_radius);
    s.field("boundary_roughness", b.boundary_roughness);
    s.field("screw_radius", b.screw_radius);
    s.field("screw_half_length", b.screw_half_length);
    s.field("thread_period", b.thread_period);
    s.field("thread_depth", b.thread_depth);
    s.field("degradation_thickness", b.degradation_thickness);
    s.field("woven_width", b.woven_width);
    s.field("woven_ct_factor", b.woven_ct_factor);
    s.field("pore_density", b.pore_density);
    s.field("pore_radius", b.pore_radius);
    s.field("soft_tissue_fraction", b.soft_tissue_fraction);
    s.field("density_contrast", b.density_contrast);
    s.field("cracks", b.cracks);
    s.field("striations", b.striations);
    s.field("ct_noise", b.ct_noise);
    s.field("histology_noise", b.histology_noise);
    s.field("pixel_size_um", b.pixel_size_um);
  });
  io.section("folds", [&](auto& s) {
    s.field("k", c.split.k);
    s.field("ratio", c.split.ratio);
    s.field("test_counts", c.split.test_counts);
    s.field("val_fraction", c.split.val_fraction);
  });
  io.section("train", [&](auto& s) {
    auto& t = c.train;
    s.field("variant", t.variant);
    s.field("epochs", t.epochs);
    s.field("batch_size", t.batch_size);
    s.field("buffer_capacity", t.buffer_capacity);
    s.field("val_patches_per_pair", t.val_patches_per_pair);
    s.section("weights", [&](auto& w) {
      w.field("cyc", t.weights.cyc);
      w.field("id", t.weights.id);
      w.field("px", t.weights.px);
      w.field("gs", t.weights.gs);
      w.field("l1", t.weights.l1);
    });
    s.section("adam", [&](auto& a) {
      a.field("lr", t.adam.lr);
      a.field("beta1", t.adam.beta1);
      a.field("beta2", t.adam.beta2);
      a.field("eps", t.adam.eps);
    });
    s.section("augment", [&](auto& a) {
      a.field("patch_size", t.augment.patch_size);
      a.field("rescale_min", t.augment.rescale_min);
      a.field("rescale_max", t.augment.rescale_max);
      a.field("hflip", t.augment.hflip);
      a.field("vflip", t.augment.vflip);
      a.field("jitter", t.augment.jitter);
      a.field("patches_per_pair", t.augment.patches_per_pair);
    });
    s.section("generator", [&](auto& g) {
      g.field("kind", t.generator.kind);
      g.field("width", t.generator.width);
      g.field("residual_blocks", t.generator.residual_blocks);
      g.field("unet_depth", t.generator.unet_depth);
    });
    s.section("discriminator", [&](auto& d) {
      d.field("conditional", t.discriminator.conditional);
      d.field("width", t.discriminator.width);
      d.field("layers", t.discriminator.layers);
    });
  });
  io.section("infer", [&](auto& s) {
    s.field("tile", c.infer.tile);
    s.field("step", c.infer.step);
    s.field("batch", c.infer.batch);
    s.field("sigma", c.infer.sigma);
    s.field("truncate", c.infer.truncate);
    s.field("voxel_size_um", c.infer.voxel_size_um);
  });
  io.section("eval", [&](auto& s) {
    s.field("patch", c.eval.patch);
    s.field("lpips_weights", c.eval.lpips_weights);
    s.field("frc", c.eval.frc);
    s.field("frc_patch", c.eval.frc_patch);
  });
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

fs::path require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " given");
  return p;
}

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t = c.train;
  t.seed = c.seed;
  t.validate();
  return t.resolved();
}

// Manifest entries with a mask file, for telling provided masks from the
// all-ones stand-in.
std::set<std::string> ids_with_masks(const Manifest& m) {
  std::set<std::string> out;
  for (const auto& e : m.entries) {
    if (!e.mask.empty()) out.insert(e.id);
  }
  return out;
}

std::map<std::string, std::vector<ImagePair>> split_pairs(const RunConfig& c, const std::vector<ImagePair>& pairs) {
  std::map<std::string, std::vector<ImagePair>> out;
  if (c.folds.empty()) {
    out["all"] = pairs;
    return out;
  }
  const train::FoldPlan plan = read_fold_plan(c.folds);
  const int fold = c.fold < 0 ? 0 : c.fold;
  if (fold >= static_cast<int>(plan.folds.size())) throw ConfigError("fold " + std::to_string(fold) + " not in plan");
  const auto& f = plan.folds[static_cast<std::size_t>(fold)];
  std::map<std::string, std::string> split_of;
  for (const auto& id : f.train_ids) split_of[id] = "train";
  for (const auto& id : f.val_ids) split_of[id] = "val";
  for (const auto& id : plan.test_ids) split_of[id] = "test";
  for (const auto& p : pairs) {
    const auto it = split_of.find(p.id);
    if (it != split_of.end()) out[it->second].push_back(p);
  }
  return out;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j = json::object();
  Writer w{j};
  visit(w, c);
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  r.finish();
  return c;
}

RunConfig load_config(const fs::path& path) { return from_json(read_json(path)); }

void write_config(const RunConfig& c, const fs::path& dir) {
  RunConfig echo = c;
  echo.train = train_config(c);
  write_json(dir / "config.json", to_json(echo));
}

void write_fold_plan(const train::FoldPlan& plan, const fs::path& path) {
  json folds = json::array();
  for (const auto& f : plan.folds) folds.push_back({{"train", f.train_ids}, {"val", f.val_ids}});
  write_json(path, {{"test", plan.test_ids}, {"folds", folds}});
}

train::FoldPlan read_fold_plan(const fs::path& path) {
  const json j = read_json(path);
  train::FoldPlan plan;
  try {
    plan.test_ids = j.at("test").get<std::vector<std::string>>();
    for (const auto& f : j.at("folds")) {
      plan.folds.push_back({f.at("train").get<std::vector<std::string>>(), f.at("val").get<std::vector<std::string>>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed fold plan (" + e.what() + ")");
  }
  return plan;
}

ImagePair preprocess_pair(const ImagePair& pair) {
  check_aligned(pair);
  ImagePair q = pair;
  q.ct = normalize_ct(pair.ct, pair.rois.bone, pair.rois.background);
  q.histology = normalize_histology(pair.histology, pair.rois.bone, pair.rois.background);
  std::vector<CorrespondenceMask> manual;
  const auto& prov = pair.mask.provenance;
  if (!prov.empty() && prov.rfind("auto hull", 0) != 0) manual.push_back(pair.mask);
  q.mask = masking::build_correspondence_mask(q, manual);
  return q;
}

void cmd_phantom(const RunConfig& c) {
  const fs::path out = c.out;
  fs::create_directories(out);
  const auto pairs = phantom::generate_phantom_dataset(c.phantom.count, c.phantom.ratio, c.seed, c.phantom.base);
  Manifest m;
  m.root = out;
  for (const auto& p : pairs) m.entries.push_back(write_pair(out, p));
  write_manifest(out / "manifest.json", m);

  if (c.phantom.stack_depth > 0) {
    // A CT stack through one extra phantom, normalised like the pairs so
    // trained models apply to it directly.
    phantom::PhantomSpec s = c.phantom.base;
    s.seed = derive_seed(c.seed, 1000);
    const double z0 = -0.5 * (c.phantom.stack_depth - 1);
    s.slice_z = z0;
    const ImagePair ref = phantom::generate_phantom_pair(s);
    const CtAffine map = fit_ct_normalization(ref.ct, ref.rois.bone, ref.rois.background);
    const fs::path dir = out / "stack";
    fs::create_directories(dir);
    const auto stack = phantom::generate_ct_stack(s, c.phantom.stack_depth, z0);
    for (std::size_t k = 0; k < stack.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "slice_%04zu.png", k);
      write_png(dir / name, apply_ct_affine(stack[k], map).pixels);
    }
  }
  write_config(c, out);
  std::cout << "phantom: " << pairs.size() << " pairs -> " << (out / "manifest.json").string() << '\n';
}

void cmd_preprocess(const RunConfig& c) {
  const fs::path manifest_path = require_path(c.manifest, "manifest");
  const Manifest in = read_manifest(manifest_path);
  const auto with_mask = ids_with_masks(in);
  const fs::path out = c.out;
  fs::create_directories(out);
  Manifest m;
  m.root = out;
  int untrainable = 0;
  for (const auto& e : in.entries) {
    ImagePair p = read_pair(in, e);
    if (!with_mask.count(e.id)) p.mask.provenance.clear();
    const ImagePair q = preprocess_pair(p);
    if (q.mask.empty()) ++untrainable;
    ManifestEntry written = write_pair(out, q);
    written.split = e.split;
    m.entries.push_back(written);
  }
  write_manifest(out / "manifest.json", m);
  write_config(c, out);
  std::cout << "preprocess: " << m.entries.size() << " pairs";
  if (untrainable) std::cout << ", " << untrainable << " with empty masks";
  std::cout << '\n';
}

void cmd_train(const RunConfig& c) {
  const auto cfg = train_config(c);
  const auto dataset = read_dataset(require_path(c.manifest, "manifest"));
  const auto refs = train::pair_refs(dataset);
  const fs::path out = c.out;
  fs::create_directories(out);

  train::FoldPlan plan;
  if (!c.folds.empty()) {
    plan = read_fold_plan(c.folds);
  } else {
    const auto test = train::choose_test_ids(refs, c.split.test_counts, derive_seed(c.seed, 3));
    plan = train::make_folds(refs, c.split.k, c.split.ratio, derive_seed(c.seed, 4), test, c.split.val_fraction);
  }
  write_fold_plan(plan, out / "folds.json");
  write_config(c, out);

  std::vector<int> folds;
  if (c.fold >= 0) {
    folds.push_back(c.fold);
  } else {
    for (int k = 0; k < static_cast<int>(plan.folds.size()); ++k) folds.push_back(k);
  }
  json finals = json::array();
  for (int k : folds) {
    const fs::path dir = out / ("fold_" + std::to_string(k));
    const auto result = train::train_fold(cfg, plan, k, dataset, dir, c.resume);
    const auto& last = result.log.back();
    std::cout << "train: fold " << k << " epoch " << last.epoch << " total " << last.mean.total << " val_px "
              << last.val_px << " -> " << result.final_checkpoint.string() << '\n';
    finals.push_back({{"fold", k}, {"checkpoint", result.final_checkpoint.string()}});
  }
  write_json(out / "final.json", {{"variant", train::to_string(cfg.variant)}, {"folds", finals}});
}

void cmd_infer(const RunConfig& c) {
  train::LoadedModel model = train::load_model(require_path(c.checkpoint, "checkpoint"));
  const bool invert = c.invert_ct || model.invert_ct;
  const auto t = infer::translator(*model.generator);
  const fs::path out = c.out;
  fs::create_directories(out);

  if (c.volume) {
    const auto stack = infer::read_ct_stack(require_path(c.input, "input stack"), c.infer.voxel_size_um);
    const auto vol = infer::infer_volume(t, stack, c.infer.tile, c.infer.step, invert, c.infer.sigma,
                                         c.infer.truncate, c.infer.batch);
    infer::export_rgba_volume(vol, out / "volume");
    write_config(c, out);
    std::cout << "infer: " << vol.depth() << " slices -> " << (out / "volume").string() << '\n';
    return;
  }

  const auto pairs = read_dataset(require_path(c.manifest, "manifest"));
  for (const auto& p : pairs) {
    const auto plan = infer::plan_tiles(p.ct.pixels.width(), p.ct.pixels.height(), c.infer.tile, c.infer.step);
    const HistologySlide raw = infer::infer_wsi(t, p.ct, plan, invert, c.infer.batch);
    write_png(out / (p.id + "_generated_raw.png"), raw.rgb);
    const HistologySlide masked = infer::mask_output(raw, p.mask, eval::background_colour(p));
    write_png(out / (p.id + "_generated.png"), masked.rgb);
  }
  write_config(c, out);
  std::cout << "infer: " << pairs.size() << " slides -> " << out.string() << '\n';
}

void cmd_eval(const RunConfig& c) {
  train::LoadedModel model = train::load_model(require_path(c.checkpoint, "checkpoint"));
  const auto pairs = read_dataset(require_path(c.manifest, "manifest"));
  const auto t = infer::translator(*model.generator);
  const fs::path out = c.out;
  fs::create_directories(out);

  const std::optional<eval::Lpips> lpips = eval::Lpips::load(c.eval.lpips_weights);
  const eval::Lpips* lp = lpips ? &*lpips : nullptr;
  eval::EvalProtocol protocol;
  protocol.patch = c.eval.patch;
  protocol.tile = c.infer.tile;
  protocol.step = c.infer.step;
  protocol.invert_ct = c.invert_ct || model.invert_ct;

  const std::string variant = train::to_string(model.variant);
  std::vector<eval::MetricReport> reports;
  eval::FrcResult frc;
  for (const auto& [split, group] : split_pairs(c, pairs)) {
    eval::MetricReport r;
    r.split = split;
    r.variant = variant;
    r.lpips_available = lp != nullptr;
    for (const auto& p : group) {
      const HistologySlide gen = eval::generate(t, p, protocol);
      eval::score_pair(r, p.id, p.histology.rgb, gen.rgb, p.mask, protocol.patch, lp);
      if (c.eval.frc && split != "train") {
        eval::frc_pair(frc, p.id, gen.rgb, p.histology.rgb, p.ct.pixels, p.mask, c.eval.frc_patch);
      }
    }
    const auto base = eval::baseline_cross_modality(group, split, protocol.patch, lp);
    eval::write_patch_csv(r, out / (split + "_patches.csv"));
    eval::write_summary_csv(r, out / (split + "_summary.csv"));
    eval::write_patch_csv(base, out / ("baseline_" + split + "_patches.csv"));
    eval::write_summary_csv(base, out / ("baseline_" + split + "_summary.csv"));
    const auto o = r.overall(), b = base.overall();
    std::cout << "eval: " << split << " " << o.patches << " patches (" << r.excluded_total()
              << " excluded) SSIM " << o.ssim << " baseline " << b.ssim << " LPIPS "
              << (lp ? std::to_string(o.lpips) : std::string("unavailable")) << '\n';
    reports.push_back(std::move(r));
    reports.push_back(base);
  }
  eval::write_long_csv(reports, out / "long.csv");
  if (c.eval.frc) eval::write_frc_csv(frc, out / "frc_patches.csv", out / "frc_pairs.csv");
  write_config(c, out);
}

int run(int argc, char** argv) {
  CLI::App app{"Virtual histology staining of CT slices"};
  app.require_subcommand(1);
  std::string config_path, variant, out, manifest, checkpoint, input, folds;
  std::uint64_t seed = 0;
  int fold = 0, step = 0;
  bool invert = false, volume = false, resume = false;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  auto* o_seed = app.add_option("--seed", seed, "Global seed");
  auto* o_variant = app.add_option("--variant", variant, "modified_cyclegan, standard_cyclegan, "
                                                         "standard_cyclegan_inverted_ct or pix2pix");
  auto* o_fold = app.add_option("--fold", fold, "Fold index; -1 trains every fold");
  auto* o_step = app.add_option("--step", step, "Inference tile step");
  auto* o_invert = app.add_flag("--invert-ct", invert, "Invert CT intensities before inference");
  auto* o_volume = app.add_flag("--volume", volume, "Infer a CT stack instead of slides");
  auto* o_out = app.add_option("--out", out, "Output directory");
  auto* o_manifest = app.add_option("--manifest", manifest, "Dataset manifest");
  auto* o_checkpoint = app.add_option("--checkpoint", checkpoint, "Checkpoint directory");
  auto* o_input = app.add_option("--input", input, "CT stack for --volume");
  auto* o_folds = app.add_option("--folds", folds, "Fold plan written by train");
  auto* o_resume = app.add_flag("--resume", resume, "Continue from the saved training state");

  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"phantom", "Generate a synthetic paired dataset"},
      {"preprocess", "Normalise pairs and build correspondence masks"},
      {"train", "Train a translation model per fold"},
      {"infer", "Translate CT slides or a CT stack"},
      {"eval", "Score a checkpoint and the baseline on held-out pairs"},
  };
  for (const auto& [name, about] : commands) {
    app.add_subcommand(name, about)->fallthrough()->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[config] " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (*o_seed) c.seed = seed;
    if (*o_variant) c.train.variant = train::parse_variant(variant);
    if (*o_fold) c.fold = fold;
    if (*o_step) c.infer.step = step;
    if (*o_invert) c.invert_ct = invert;
    if (*o_volume) c.volume = volume;
    if (*o_out) c.out = out;
    if (*o_manifest) c.manifest = manifest;
    if (*o_checkpoint) c.checkpoint = checkpoint;
    if (*o_input) c.input = input;
    if (*o_folds) c.folds = folds;
    if (*o_resume) c.resume = resume;

    if (command == "phantom") cmd_phantom(c);
    else if (command == "preprocess") cmd_preprocess(c);
    else if (command == "train") cmd_train(c);
    else if (command == "infer") cmd_infer(c);
    else cmd_eval(c);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "] " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io] " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[config] " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error[internal] " << e.what() << '\n';
  }
  return 1;
}

}  // namespace vstain::cli
