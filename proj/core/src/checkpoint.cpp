#include "reasonseg/checkpoint.h"

#include <cstring>
#include <fstream>
#include <regex>

#include "reasonseg/errors.h"
#include "reasonseg/optimizer.h"

namespace reasonseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'S', 'E', 'G', 'P', 'R', 'M', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DecodeError("parameter file is truncated");
  return v;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw NotFound("missing checkpoint file: " + p.string());
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + p.string());
}

}  // namespace

std::string step_dir_name(int step) { return "step_" + std::to_string(step); }

void save_params(const nn::ParameterStore& store, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& v = p.var.value();
    put<std::int64_t>(out, v.rows());
    put<std::int64_t>(out, v.cols());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void load_params(nn::ParameterStore& store, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("missing parameter file: " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DecodeError("not a parameter file: " + path.string());
  const auto count = get<std::uint32_t>(in);
  if (count != store.params().size()) {
    throw DecodeError("parameter count mismatch: file has " + std::to_string(count) + ", model has " +
                      std::to_string(store.params().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    auto& p = store.get(name);
    ag::Matrix& v = p.var.mutable_value();
    if (v.rows() != rows || v.cols() != cols) throw DecodeError("shape mismatch for parameter " + name);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw DecodeError("parameter file is truncated");
  }
}

void save_checkpoint(const fs::path& dir, const ReasoningSegModel& model, const json& train_config,
                     const CheckpointState& state, const AdamW* optimizer) {
  fs::create_directories(dir);
  save_params(model.params(), dir / "params.bin");
  write_json(dir / "config.snapshot", json{{"model", model.config()}, {"train", train_config}});
  model.tokenizer().save(dir / "vocab.txt");
  write_json(dir / "state.json", json{{"stage", state.stage}, {"step", state.step}, {"rng", state.rng}});
  if (optimizer) {
    std::ofstream out(dir / "optimizer.bin", std::ios::binary);
    optimizer->save(out);
  }
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) return std::nullopt;
  static const std::regex pattern("step_([0-9]+)");
  std::optional<fs::path> best;
  long best_step = -1;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, pattern) && fs::exists(entry.path() / "params.bin")) {
      const long step = std::stol(m[1]);
      if (step > best_step) {
        best_step = step;
        best = entry.path();
      }
    }
  }
  return best;
}

Checkpoint load_checkpoint(const fs::path& path) {
  fs::path dir = path;
  if (!fs::exists(dir / "params.bin")) {
    auto latest = latest_checkpoint(path);
    if (!latest) throw NotFound("no checkpoint found at " + path.string());
    dir = *latest;
  }
  json snapshot = read_json(dir / "config.snapshot");
  json state = read_json(dir / "state.json");
  Checkpoint ck;
  ck.dir = dir;
  ck.model = std::make_unique<ReasoningSegModel>(snapshot.at("model").get<ModelConfig>(),
                                                 Tokenizer::load(dir / "vocab.txt"));
  load_params(ck.model->params(), dir / "params.bin");
  ck.train_config = snapshot.value("train", json::object());
  ck.state.stage = state.value("stage", 0);
  ck.state.step = state.value("step", 0);
  ck.state.rng = state.value("rng", "");
  ck.has_optimizer = fs::exists(dir / "optimizer.bin");
  return ck;
}

}  // namespace reasonseg
