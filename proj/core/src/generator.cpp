#include "reasonseg/generator.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "reasonseg/dataset.h"
#include "reasonseg/errors.h"
#include "reasonseg/png_codec.h"

namespace reasonseg {
namespace {

using nlohmann::json;

const std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

struct EmittedSample {
  DialogueSample sample;
  BinaryMask mask;
};

struct ImageOutcome {
  ImageStatus status;
  std::vector<EmittedSample> samples;
  std::optional<ReasoningTree> tree;
  int num_elements = 0;
  std::vector<json> quarantine;
};

std::string image_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d", index);
  return buf;
}

ImageOutcome process_image(const std::string& image_id, const ImageBuffer& image, GeneratorBackend& backend,
                           const GenConfig& cfg, std::uint64_t image_seed) {
  ImageOutcome out;
  out.status.image_id = image_id;
  try {
    const auto elements = backend.extract_elements(image_id, image);
    out.num_elements = static_cast<int>(elements.size());
    if (elements.empty()) {
      out.status.status = "skipped";
      out.status.reason = "no elements";
      return out;
    }
    if (elements.size() < 2) {
      out.status.status = "skipped";
      out.status.reason = "fewer than 2 elements";
      return out;
    }
    std::mt19937_64 rng(image_seed);
    const auto targets = select_targets(elements, rng, cfg.k_min, cfg.k_max);
    std::vector<ReasoningQuestion> questions;
    for (const auto& t : targets) {
      auto q = backend.form_question(image_id, image, t, elements);
      if (q.text.empty()) throw PipelineError(image_id, "empty question for " + t.id);
      questions.push_back(std::move(q));
    }
    ReasoningTree tree =
        build_tree(image_id, image, questions, elements, backend, cfg.max_children, cfg.max_depth);
    const std::string caption = backend.caption(image_id, elements);
    for (const auto& path : tree.paths) {
      DialogueSample s = assemble_dialogue(image_id, path, elements, backend);
      s.scene_caption = caption;
      s.image_path = "images/" + image_id + ".png";
      const auto target = std::find_if(elements.begin(), elements.end(),
                                       [&](const SceneElement& e) { return e.id == path.target_id; });
      const auto problems = dialogue_violations(s);
      if (!target->gt_mask) {
        out.quarantine.push_back({{"sample_id", s.sample_id}, {"image_id", image_id}, {"reason", "missing mask"}});
        continue;
      }
      if (!problems.empty()) {
        out.quarantine.push_back({{"sample_id", s.sample_id}, {"image_id", image_id}, {"reason", problems.front()}});
        continue;
      }
      s.mask_path = "masks/" + s.sample_id + ".png";
      out.samples.push_back({std::move(s), *target->gt_mask});
    }
    out.tree = std::move(tree);
    out.status.status = "ok";
    out.status.samples = static_cast<int>(out.samples.size());
  } catch (const PipelineError& e) {
    spdlog::error("{}", e.what());
    out.status.status = "failed";
    out.status.reason = e.what();
    out.samples.clear();
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw NotFound("image directory not found: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (backend != "synthetic" && backend != "llm") throw InvalidInput("unknown backend: " + backend);
  if (num_images < 0) throw InvalidInput("num_images must be non-negative");
  if (k_min < 2 || k_max < k_min || k_max > 4) throw InvalidInput("require 2 <= k_min <= k_max <= 4");
  if (max_depth < kMinTreeDepth) throw InvalidInput("max_depth must be at least 2");
  if (max_children < 1) throw InvalidInput("max_children must be positive");
  if (max_side_branches < 0) throw InvalidInput("max_side_branches must be non-negative");
  double total = 0;
  for (double r : split_ratio) {
    if (r < 0) throw InvalidInput("split ratios must be non-negative");
    total += r;
  }
  if (!(total > 0)) throw InvalidInput("split ratios must not all be zero");
  if (!(max_failure_fraction >= 0 && max_failure_fraction <= 1)) {
    throw InvalidInput("max_failure_fraction must be in [0,1]");
  }
  if (out_dir.empty()) throw InvalidInput("output directory is required");
  if (backend == "llm" && images_dir.empty()) throw InvalidInput("the llm backend needs an images directory");
  if (backend == "synthetic") scene.validate();
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"backend", c.backend},
           {"num_images", c.num_images},
           {"seed", c.seed},
           {"k_min", c.k_min},
           {"k_max", c.k_max},
           {"max_depth", c.max_depth},
           {"max_children", c.max_children},
           {"max_side_branches", c.max_side_branches},
           {"scene",
            {{"size", c.scene.size},
             {"min_elements", c.scene.min_elements},
             {"max_elements", c.scene.max_elements},
             {"granularity_mix", c.scene.granularity_mix},
             {"granularity_scale", c.scene.granularity_scale},
             {"max_area_fraction", c.scene.max_area_fraction}}},
           {"split_ratio", c.split_ratio},
           {"out_dir", c.out_dir.generic_string()},
           {"images_dir", c.images_dir.generic_string()},
           {"max_failure_fraction", c.max_failure_fraction}};
}

void from_json(const json& j, GenConfig& c) {
  c.backend = j.value("backend", c.backend);
  c.num_images = j.value("num_images", c.num_images);
  c.seed = j.value("seed", c.seed);
  c.k_min = j.value("k_min", c.k_min);
  c.k_max = j.value("k_max", c.k_max);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.max_children = j.value("max_children", c.max_children);
  c.max_side_branches = j.value("max_side_branches", c.max_side_branches);
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    c.scene.size = s.value("size", c.scene.size);
    c.scene.min_elements = s.value("min_elements", c.scene.min_elements);
    c.scene.max_elements = s.value("max_elements", c.scene.max_elements);
    c.scene.granularity_mix = s.value("granularity_mix", c.scene.granularity_mix);
    c.scene.granularity_scale = s.value("granularity_scale", c.scene.granularity_scale);
    c.scene.max_area_fraction = s.value("max_area_fraction", c.scene.max_area_fraction);
  }
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  c.out_dir = j.value("out_dir", c.out_dir.generic_string());
  c.images_dir = j.value("images_dir", c.images_dir.generic_string());
  c.max_failure_fraction = j.value("max_failure_fraction", c.max_failure_fraction);
}

void to_json(json& j, const GenerationReport& r) {
  json hist = json::object();
  for (const auto& [split, counts] : r.histogram) {
    const int total = counts[0] + counts[1] + counts[2];
    hist[split] = {{"Fine", counts[0]}, {"Medium", counts[1]}, {"Coarse", counts[2]}, {"total", total}};
  }
  j = json{{"images", r.images},   {"ok", r.ok},           {"skipped", r.skipped},
           {"failed", r.failed},   {"samples", r.samples}, {"quarantined", r.quarantined},
           {"histogram", hist}};
}

std::map<std::string, std::string> assign_splits(const std::map<std::string, Granularity>& image_strata,
                                                 const std::array<double, 3>& ratio, std::uint64_t seed) {
  const double total = ratio[0] + ratio[1] + ratio[2];
  std::map<Granularity, std::vector<std::string>> groups;
  for (const auto& [id, g] : image_strata) groups[g].push_back(id);
  std::map<std::string, std::string> out;
  for (auto& [g, ids] : groups) {
    std::mt19937_64 rng(mix_seed(seed, 0x5eed0000u + static_cast<std::uint64_t>(g)));
    std::shuffle(ids.begin(), ids.end(), rng);
    // Largest-remainder rounding of the per-split quotas.
    const double n = static_cast<double>(ids.size());
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
      const double exact = n * ratio[static_cast<std::size_t>(i)] / total;
      count[static_cast<std::size_t>(i)] = static_cast<std::size_t>(exact);
      rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
      assigned += count[static_cast<std::size_t>(i)];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)];
    });
    for (std::size_t k = 0; assigned < ids.size(); ++k, ++assigned) ++count[static_cast<std::size_t>(order[k % 3])];
    std::size_t pos = 0;
    for (std::size_t split = 0; split < 3; ++split)
      for (std::size_t c = 0; c < count[split]; ++c) out[ids[pos++]] = kSplitNames[split];
  }
  return out;
}

GenerationReport generate_dataset(const GenConfig& config, GeneratorBackend* backend) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path root = config.out_dir;
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  std::unique_ptr<SyntheticBackend> synthetic;
  std::vector<fs::path> sources;
  if (config.backend == "synthetic") {
    synthetic = std::make_unique<SyntheticBackend>(config.seed, config.max_side_branches);
    backend = synthetic.get();
  } else {
    if (!backend) throw InvalidInput("the llm backend requires a backend instance");
    sources = list_pngs(config.images_dir);
    if (config.num_images > 0 && sources.size() > static_cast<std::size_t>(config.num_images)) {
      sources.resize(static_cast<std::size_t>(config.num_images));
    }
  }
  const int count = synthetic ? config.num_images : static_cast<int>(sources.size());

  GenerationReport report;
  std::vector<EmittedSample> samples;
  std::vector<ImageStatus> statuses;
  std::vector<json> trees;
  std::vector<json> quarantine;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t image_seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));
    std::string image_id;
    ImageBuffer image;
    if (synthetic) {
      image_id = image_id_for(i);
      SyntheticScene scene = generate_scene(config.scene, image_seed);
      image = scene.image;
      synthetic->register_scene(image_id, std::move(scene));
    } else {
      image_id = sources[static_cast<std::size_t>(i)].stem().string();
      try {
        image = png_to_image(read_file(sources[static_cast<std::size_t>(i)]));
      } catch (const std::exception& e) {
        statuses.push_back({image_id, "failed", std::string("unreadable image: ") + e.what(), 0});
        ++report.failed;
        continue;
      }
    }
    ImageOutcome outcome = process_image(image_id, image, *backend, config, mix_seed(image_seed, 1));
    if (outcome.status.status == "ok" && !outcome.samples.empty()) {
      write_file(root / "images" / (image_id + ".png"), image_to_png(image));
    }
    if (outcome.tree) {
      json t = *outcome.tree;
      t["num_elements"] = outcome.num_elements;
      trees.push_back(std::move(t));
    }
    for (auto& q : outcome.quarantine) quarantine.push_back(std::move(q));
    for (auto& s : outcome.samples) samples.push_back(std::move(s));
    if (outcome.status.status == "ok") ++report.ok;
    if (outcome.status.status == "skipped") ++report.skipped;
    if (outcome.status.status == "failed") ++report.failed;
    statuses.push_back(std::move(outcome.status));
  }
  report.images = count;

  std::map<std::string, Granularity> strata;
  for (const auto& s : samples) {
    const std::string image_id = s.sample.source_tree->substr(0, s.sample.source_tree->find('#'));
    strata.emplace(image_id, s.sample.granularity.value);  // first target wins
  }
  const auto splits = assign_splits(strata, config.split_ratio, config.seed);
  for (const char* name : kSplitNames) report.histogram[name] = {0, 0, 0};
  for (auto& s : samples) {
    const std::string image_id = s.sample.source_tree->substr(0, s.sample.source_tree->find('#'));
    s.sample.split = splits.at(image_id);
    ++report.histogram[s.sample.split][static_cast<std::size_t>(s.sample.granularity.value)];
    write_file(root / s.sample.mask_path, mask_to_png(s.mask));
  }
  std::sort(samples.begin(), samples.end(),
            [](const EmittedSample& a, const EmittedSample& b) { return a.sample.sample_id < b.sample.sample_id; });
  std::sort(statuses.begin(), statuses.end(),
            [](const ImageStatus& a, const ImageStatus& b) { return a.image_id < b.image_id; });
  report.samples = static_cast<int>(samples.size());
  report.quarantined = static_cast<int>(quarantine.size());

  std::string manifest;
  for (const auto& s : samples) manifest += json(s.sample).dump() + "\n";
  for (const auto& st : statuses) manifest += json(st).dump() + "\n";
  write_text(root / "manifest.jsonl", manifest);

  std::string tree_lines;
  for (const auto& t : trees) tree_lines += t.dump() + "\n";
  write_text(root / "trees.jsonl", tree_lines);

  std::string quarantine_lines;
  for (const auto& q : quarantine) quarantine_lines += q.dump() + "\n";
  write_text(root / "quarantine.jsonl", quarantine_lines);

  std::array<int, 3> all{};
  for (const auto& [split, counts] : report.histogram)
    for (std::size_t g = 0; g < 3; ++g) all[g] += counts[g];
  const double total = std::max(1, all[0] + all[1] + all[2]);
  json stats = report;
  stats["backend"] = config.backend;
  stats["seed"] = config.seed;
  stats["granularity_scale"] = config.scene.granularity_scale;
  stats["standard_image_side"] = kStandardImageSide;
  stats["granularity_fraction"] = {{"Fine", all[0] / total}, {"Medium", all[1] / total}, {"Coarse", all[2] / total}};
  write_text(root / "stats.json", stats.dump(2) + "\n");

  spdlog::info("generated {} samples from {} images ({} skipped, {} failed, {} quarantined)", report.samples,
               report.images, report.skipped, report.failed, report.quarantined);
  return report;
}

double cohen_kappa(std::span<const BinaryMask> a, std::span<const BinaryMask> b) {
  if (a.empty() || a.size() != b.size()) throw InvalidInput("kappa needs equal-length non-empty mask lists");
  std::uint64_t both = 0, only_a = 0, only_b = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) throw InvalidInput("mask pair " + std::to_string(i) + " differs in shape");
    for (std::size_t p = 0; p < a[i].size(); ++p) {
      const bool x = a[i][p], y = b[i][p];
      both += x && y;
      only_a += x && !y;
      only_b += !x && y;
    }
    n += a[i].size();
  }
  if (n == 0) throw InvalidInput("kappa over zero pixels");
  const double N = static_cast<double>(n);
  const double p_o = (N - static_cast<double>(only_a + only_b)) / N;
  const double pa = static_cast<double>(both + only_a) / N;
  const double pb = static_cast<double>(both + only_b) / N;
  const double p_e = pa * pb + (1 - pa) * (1 - pb);
  if (p_e >= 1.0) return 1.0;
  return (p_o - p_e) / (1 - p_e);
}

AgreementReport agreement_report(std::span<const BinaryMask> a, std::span<const BinaryMask> b) {
  if (a.empty()) throw InvalidInput("agreement report needs at least one annotation pair");
  if (a.size() != b.size()) throw InvalidInput("annotation lists differ in length");
  AgreementReport r;
  for (std::size_t i = 0; i < a.size(); ++i) r.mean_iou += mask_iou(a[i], b[i]);
  r.mean_iou /= static_cast<double>(a.size());
  r.kappa = cohen_kappa(a, b);
  return r;
}

}  // namespace reasonseg
