#include "reasonseg/reasoning.h"

#include <algorithm>
#include <cmath>
#include <regex>

#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

// {c} is the colour clue and {s} the shape clue.
const std::vector<std::string>& question_templates() {
  static const std::vector<std::string> t = {
      "Which object has the colour of {c} and {s} ?",
      "If I wanted something the colour of {c} that {s} , what would I pick ?",
      "Can you find the thing that {s} and reminds me of {c} ?",
      "Where is the object that {s} and shares its colour with {c} ?",
  };
  return t;
}

const ColourSpec* colour_by_name(const std::string& name) {
  for (const auto& c : scene_colours())
    if (c.name == name) return &c;
  return nullptr;
}

const ShapeSpec* shape_by_name(const std::string& name) {
  for (const auto& s : scene_shapes())
    if (s.name == name) return &s;
  return nullptr;
}

const SceneElement* find_element(std::span<const SceneElement> elements, const std::string& id) {
  for (const auto& e : elements)
    if (e.id == id) return &e;
  return nullptr;
}

std::string attribute(const SceneElement& e, const std::string& key) {
  auto it = e.attributes.find(key);
  return it == e.attributes.end() ? std::string() : it->second;
}

std::pair<double, double> centroid(const BinaryMask& m) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.at(x, y)) {
        sx += x;
        sy += y;
        n += 1;
      }
  return n > 0 ? std::pair{sx / n, sy / n} : std::pair{0.0, 0.0};
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string list_names(const std::vector<const SceneElement*>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " and" : " ,";
    out += " a " + items[i]->name;
  }
  return out;
}

void limit_children(ReasoningNode& node, int max_children, std::vector<std::string>& warnings) {
  if (static_cast<int>(node.children.size()) > max_children) {
    warnings.push_back("node '" + node.question + "' had " + std::to_string(node.children.size()) +
                       " children; truncated to " + std::to_string(max_children));
    node.children.resize(static_cast<std::size_t>(max_children));
  }
  for (auto& c : node.children) limit_children(c, max_children, warnings);
}

}  // namespace

void to_json(nlohmann::json& j, const ReasoningNode& n) {
  j = nlohmann::json{{"question", n.question}, {"answer", n.answer}, {"children", n.children}};
}

void to_json(nlohmann::json& j, const ReasoningTree& t) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : t.paths) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : p.steps) steps.push_back({{"question", s.question}, {"answer", s.answer}});
    paths.push_back({{"target_id", p.target_id}, {"depth", p.depth()}, {"steps", steps}});
  }
  j = nlohmann::json{{"image_id", t.image_id}, {"K", t.k()}, {"paths", paths}, {"roots", t.roots},
                     {"warnings", t.warnings}};
}

std::vector<Turn> GeneratorBackend::phrase_dialogue(const std::string&, const ReasoningPath& path,
                                                    std::span<const SceneElement>) {
  std::vector<Turn> turns;
  for (const auto& s : path.steps) {
    turns.push_back({Role::User, s.question});
    turns.push_back({Role::Assistant, s.answer});
  }
  return turns;
}

std::string GeneratorBackend::caption(const std::string&, std::span<const SceneElement>) { return {}; }

std::vector<SceneElement> select_targets(std::span<const SceneElement> elements, std::mt19937_64& rng, int k_min,
                                         int k_max) {
  const int n = static_cast<int>(elements.size());
  if (k_min < 1 || k_max < k_min) throw InvalidInput("invalid target count range");
  if (n < k_min) {
    throw InvalidInput("need at least " + std::to_string(k_min) + " elements, got " + std::to_string(n));
  }
  std::uniform_int_distribution<int> k_dist(k_min, std::min(n, k_max));
  const int k = k_dist(rng);
  std::vector<std::size_t> order(elements.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Partial Fisher-Yates: the first k positions are a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
  }
  std::vector<SceneElement> out;
  for (int i = 0; i < k; ++i) out.push_back(elements[order[static_cast<std::size_t>(i)]]);
  return out;
}

ReasoningTree build_tree(const std::string& image_id, const ImageBuffer& image,
                         std::span<const ReasoningQuestion> questions, std::span<const SceneElement> elements,
                         GeneratorBackend& backend, int max_children, int max_depth) {
  if (questions.size() < 2 || questions.size() > 4) {
    throw InvalidInput("a reasoning tree needs 2 to 4 questions, got " + std::to_string(questions.size()));
  }
  if (max_children < 1) throw InvalidInput("max_children must be positive");
  if (max_depth < kMinTreeDepth) throw InvalidInput("max_depth must be at least 2");
  ReasoningTree tree;
  tree.image_id = image_id;
  if (max_depth > kMaxTreeDepth) {
    tree.warnings.push_back("requested depth " + std::to_string(max_depth) + " truncated to " +
                            std::to_string(kMaxTreeDepth));
    max_depth = kMaxTreeDepth;
  }
  for (const auto& q : questions) {
    ReasoningNode root = backend.decompose(image_id, image, q, elements, max_depth);
    limit_children(root, max_children, tree.warnings);

    // Flatten the path (children[0] chain), keeping side branches per node.
    std::vector<ReasoningNode> chain;
    for (ReasoningNode* n = &root;;) {
      ReasoningNode copy = *n;
      const bool more = !n->children.empty();
      if (more) copy.children.erase(copy.children.begin());
      chain.push_back(std::move(copy));
      if (!more) break;
      n = &n->children.front();
    }
    if (static_cast<int>(chain.size()) < kMinTreeDepth) {
      throw PipelineError(image_id, "reasoning path for " + q.target_id + " is shallower than 2");
    }
    if (static_cast<int>(chain.size()) > max_depth) {
      tree.warnings.push_back("path for " + q.target_id + " had depth " + std::to_string(chain.size()) +
                              "; truncated to " + std::to_string(max_depth));
      ReasoningNode leaf = std::move(chain.back());
      chain.resize(static_cast<std::size_t>(max_depth - 1));
      chain.push_back(std::move(leaf));
    }

    ReasoningPath path;
    path.target_id = q.target_id;
    for (const auto& n : chain) path.steps.push_back({n.question, n.answer});
    // Re-nest so the path child is first again, with at most max_children.
    ReasoningNode nested = chain.back();
    for (int i = static_cast<int>(chain.size()) - 2; i >= 0; --i) {
      ReasoningNode parent = chain[static_cast<std::size_t>(i)];
      if (static_cast<int>(parent.children.size()) >= max_children) {
        parent.children.resize(static_cast<std::size_t>(max_children - 1));
      }
      parent.children.insert(parent.children.begin(), std::move(nested));
      nested = std::move(parent);
    }
    tree.roots.push_back(std::move(nested));
    tree.paths.push_back(std::move(path));
  }
  for (const auto& w : tree.warnings) spdlog::warn("{}: {}", image_id, w);
  return tree;
}

DialogueSample assemble_dialogue(const std::string& image_id, const ReasoningPath& path,
                                 std::span<const SceneElement> elements, GeneratorBackend& backend) {
  if (path.steps.empty()) throw InvalidInput("cannot assemble a dialogue from an empty path");
  const SceneElement* target = find_element(elements, path.target_id);
  if (!target) throw InvalidInput("path target " + path.target_id + " is not an element of " + image_id);

  std::vector<Turn> turns = backend.phrase_dialogue(image_id, path, elements);
  if (turns.size() != 2 * path.steps.size()) {
    throw PipelineError(image_id, "dialogue phrasing returned " + std::to_string(turns.size()) + " turns for " +
                                      std::to_string(path.steps.size()) + " steps");
  }
  DialogueSample s;
  s.sample_id = image_id + "_" + target->id;
  s.turns = std::move(turns);
  s.turns.push_back({Role::User, std::string(kSegmentInstruction)});
  s.turns.push_back({Role::Assistant, segmentation_response(target->name)});
  s.target_class = target->name;
  s.source_tree = image_id + "#" + target->id;
  if (target->gt_mask) {
    const auto& m = *target->gt_mask;
    s.granularity = classify_granularity(
        static_cast<std::uint64_t>(std::llround(standardized_area(mask_area(m), m.width(), m.height()))));
  }
  return s;
}

int synthetic_template_count() { return static_cast<int>(question_templates().size()); }

std::string synthetic_question(const std::string& colour, const std::string& shape, int template_index) {
  const ColourSpec* c = colour_by_name(colour);
  const ShapeSpec* s = shape_by_name(shape);
  if (!c || !s) throw InvalidInput("unknown colour or shape: " + colour + " " + shape);
  if (template_index < 0 || template_index >= synthetic_template_count()) {
    throw InvalidInput("question template index out of range");
  }
  std::string q = question_templates()[static_cast<std::size_t>(template_index)];
  q = replace_all(q, "{c}", std::string(c->clue));
  return replace_all(q, "{s}", std::string(s->clue));
}

std::optional<ParsedQuestion> parse_question(const std::string& text) {
  static const std::vector<std::regex> patterns = [] {
    std::vector<std::regex> out;
    for (const auto& t : question_templates()) {
      std::string p = std::regex_replace(t, std::regex(R"([.^$|()\[\]*+?\\])"), R"(\$&)");
      p = replace_all(p, "{c}", "(?:(.+?))");
      p = replace_all(p, "{s}", "(?:(.+?))");
      out.emplace_back(p);
    }
    return out;
  }();
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    std::smatch m;
    if (!std::regex_match(text, m, patterns[i])) continue;
    const std::string& tmpl = question_templates()[i];
    const bool colour_first = tmpl.find("{c}") < tmpl.find("{s}");
    const std::string colour_clue = m[colour_first ? 1 : 2];
    const std::string shape_clue = m[colour_first ? 2 : 1];
    ParsedQuestion out;
    out.template_index = static_cast<int>(i);
    for (const auto& c : scene_colours())
      if (c.clue == colour_clue) out.colour = c.name;
    for (const auto& s : scene_shapes())
      if (s.clue == shape_clue) out.shape = s.name;
    if (!out.colour.empty() && !out.shape.empty()) return out;
  }
  return std::nullopt;
}

void SyntheticBackend::register_scene(const std::string& image_id, SyntheticScene scene) {
  scenes_[image_id] = std::move(scene);
}

std::mt19937_64 SyntheticBackend::rng_for(const std::string& image_id, const std::string& salt) const {
  return std::mt19937_64(mix_seed(seed_, std::hash<std::string>{}(image_id + "/" + salt)));
}

std::vector<SceneElement> SyntheticBackend::extract_elements(const std::string& image_id, const ImageBuffer&) {
  auto it = scenes_.find(image_id);
  if (it == scenes_.end()) throw PipelineError(image_id, "synthetic backend has no scene for this image");
  return it->second.elements;
}

std::string SyntheticBackend::caption(const std::string& image_id, std::span<const SceneElement>) {
  auto it = scenes_.find(image_id);
  return it == scenes_.end() ? std::string() : it->second.caption;
}

ReasoningQuestion SyntheticBackend::form_question(const std::string& image_id, const ImageBuffer&,
                                                  const SceneElement& target, std::span<const SceneElement>) {
  auto rng = rng_for(image_id, "question/" + target.id);
  std::uniform_int_distribution<int> pick(0, synthetic_template_count() - 1);
  return {target.id, synthetic_question(attribute(target, "colour"), attribute(target, "shape"), pick(rng))};
}

ReasoningNode SyntheticBackend::decompose(const std::string& image_id, const ImageBuffer&,
                                          const ReasoningQuestion& question, std::span<const SceneElement> elements,
                                          int max_depth) {
  const SceneElement* target = find_element(elements, question.target_id);
  if (!target) throw PipelineError(image_id, "question target " + question.target_id + " not found");
  auto rng = rng_for(image_id, "tree/" + target->id);

  const std::string position = attribute(*target, "position");
  const std::string colour = attribute(*target, "colour");
  const std::string shape = attribute(*target, "shape");
  const std::string colour_clue(colour_by_name(colour) ? colour_by_name(colour)->clue : "");
  const std::string shape_clue(shape_by_name(shape) ? shape_by_name(shape)->clue : "");

  std::vector<const SceneElement*> others;
  for (const auto& e : elements)
    if (e.id != target->id) others.push_back(&e);

  std::vector<QaPair> middle;
  {
    std::vector<const SceneElement*> there;
    for (const auto& e : elements)
      if (attribute(e, "position") == position) there.push_back(&e);
    const bool one = there.size() == 1;
    middle.push_back({"What can be seen in that part of the image ?",
                      std::string("There ") + (one ? "is one object" : "are several objects") + " there :" +
                          list_names(there) + " ."});
  }
  middle.push_back({"Which shape " + shape_clue + " ?", "A " + shape + " " + shape_clue + " ."});
  middle.push_back({"What colour is " + colour_clue + " ?", "The colour of " + colour_clue + " is " + colour + " ."});
  middle.push_back({"How big is the object we are looking for ?", "It is a " + attribute(*target, "size") + " object ."});
  if (!others.empty() && target->gt_mask) {
    const auto [tx, ty] = centroid(*target->gt_mask);
    const SceneElement* nearest = nullptr;
    double best = 1e300;
    for (const auto* o : others) {
      if (!o->gt_mask) continue;
      const auto [ox, oy] = centroid(*o->gt_mask);
      const double d = std::hypot(ox - tx, oy - ty);
      if (d < best) {
        best = d;
        nearest = o;
      }
    }
    if (nearest) middle.push_back({"Which other object is closest to it ?", "The closest object is the " + nearest->name + " ."});
  }

  // Chain length: root + chosen middle steps + leaf.
  int depth = 0;
  const int most = std::min<int>(std::min(max_depth, depth_limit_), static_cast<int>(middle.size()) + 2);
  std::vector<QaPair> chosen;
  if (depth_limit_ > kMaxTreeDepth) {
    // Deliberately over-deep chain; exercises the builder's truncation.
    depth = depth_limit_;
    for (int i = 0; i < depth - 2; ++i) chosen.push_back(middle[static_cast<std::size_t>(i) % middle.size()]);
  } else {
    std::uniform_int_distribution<int> depth_dist(kMinTreeDepth, std::max(kMinTreeDepth, most));
    depth = depth_dist(rng);
    std::vector<std::size_t> idx(middle.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(depth - 2));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) chosen.push_back(middle[i]);
  }

  std::vector<QaPair> steps;
  steps.push_back({question.text, "The object we need is in the " + position + " part of the image ."});
  steps.insert(steps.end(), chosen.begin(), chosen.end());
  steps.push_back({"So which object is the answer ?", "The answer is " + target->description + " ."});

  auto side_branches = [&]() {
    std::vector<ReasoningNode> out;
    if (others.empty()) return out;
    std::uniform_int_distribution<int> count(0, max_side_branches_);
    const int n = count(rng);
    std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
    for (int i = 0; i < n; ++i) {
      const auto* o = others[pick(rng)];
      out.push_back({"Could it be the " + o->name + " ?", "No , the " + o->name + " does not fit the clues .", {}});
    }
    return out;
  };

  ReasoningNode node{steps.back().question, steps.back().answer, {}};
  for (int i = static_cast<int>(steps.size()) - 2; i >= 0; --i) {
    ReasoningNode parent{steps[static_cast<std::size_t>(i)].question, steps[static_cast<std::size_t>(i)].answer, {}};
    parent.children.push_back(std::move(node));
    for (auto& b : side_branches()) parent.children.push_back(std::move(b));
    node = std::move(parent);
  }
  return node;
}

}  // namespace reasonseg
