#include "rlvr/taskgen.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rlvr/ioutil.hpp"
#include "rlvr/prompts.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/vocab.hpp"

namespace rlvr {

using nlohmann::json;

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string box_text(const std::array<int, 4>& b) {
  std::ostringstream out;
  out << "[[" << b[0] << ", " << b[1] << ", " << b[2] << ", " << b[3] << "]]";
  return out.str();
}

Sample make_cls_sample(Scene scene, const std::string& id) {
  Sample s;
  s.id = id;
  s.kind = TaskKind::CLS;
  s.prompt_text = make_prompt(TaskKind::CLS, prompts::kClsCore);
  s.truth_text = scene.scene_class();
  s.scene = std::move(scene);
  return s;
}

Sample make_vqa_sample(Scene scene, const std::string& id, int subtype, Rng& rng) {
  Sample s;
  s.id = id;
  s.kind = TaskKind::VQA;
  const auto instances = scene_instances(scene);
  switch (subtype % 4) {
    case 0: {  // presence of a (color, shape) combination
      std::vector<int> present, absent;
      std::vector<bool> seen(33, false);
      for (const auto& inst : instances) seen[Scene::code_of(inst.shape, inst.color)] = true;
      for (int code = 1; code <= 32; ++code) (seen[code] ? present : absent).push_back(code);
      const bool want_yes = !present.empty() && (absent.empty() || rng.below(2) == 0);
      const auto& pool = want_yes ? present : absent;
      const int code = pool[rng.below(pool.size())];
      const std::string core =
          replace_all(replace_all(prompts::kVqaPresenceCore, "{c}",
                                  color_names()[Scene::color_of(code) - 1]),
                      "{p}", shape_plurals()[Scene::shape_of(code) - 1]);
      s.prompt_text = make_prompt(TaskKind::VQA, core);
      s.truth_text = want_yes ? "yes" : "no";
      break;
    }
    case 1: {  // instance count of one non-theme shape (stays in word range)
      const int theme = scene.dominant_shape();
      int shape = 1 + static_cast<int>(rng.below(7));
      if (shape >= theme) ++shape;
      int count = 0;
      for (const auto& inst : instances)
        if (inst.shape == shape) ++count;
      static const char* kCounts[] = {"zero", "one",  "two",   "three", "four",  "five", "six",
                                      "seven", "eight", "nine", "ten",  "eleven", "twelve"};
      count = std::min(count, 12);
      s.prompt_text = make_prompt(
          TaskKind::VQA, replace_all(prompts::kVqaCountCore, "{p}", shape_plurals()[shape - 1]));
      s.truth_text = kCounts[count];
      break;
    }
    case 2: {  // instance count comparison between two shapes
      const int a = 1 + static_cast<int>(rng.below(8));
      int b = 1 + static_cast<int>(rng.below(7));
      if (b >= a) ++b;
      int ca = 0, cb = 0;
      for (const auto& inst : instances) {
        if (inst.shape == a) ++ca;
        if (inst.shape == b) ++cb;
      }
      const std::string core =
          replace_all(replace_all(prompts::kVqaCompareCore, "{p}", shape_plurals()[a - 1]), "{p2}",
                      shape_plurals()[b - 1]);
      s.prompt_text = make_prompt(TaskKind::VQA, core);
      s.truth_text = ca > cb ? "yes" : "no";  // ties answer no
      break;
    }
    default: {  // rural / urban
      s.prompt_text = make_prompt(TaskKind::VQA, prompts::kVqaRuralUrbanCore);
      s.truth_text = scene.is_urban() ? "urban" : "rural";
    }
  }
  s.scene = std::move(scene);
  return s;
}

Sample make_vg_sample(Scene scene, const std::string& id, Rng& rng) {
  Sample s;
  s.id = id;
  s.kind = TaskKind::VG;
  auto instances = scene_instances(scene);

  // Pick an instance whose (color, shape) combination is unique in the scene;
  // recolor one if necessary so a unique referent always exists.
  std::vector<int> combo_count(33, 0);
  for (const auto& inst : instances) ++combo_count[Scene::code_of(inst.shape, inst.color)];
  std::vector<size_t> unique;
  for (size_t i = 0; i < instances.size(); ++i)
    if (combo_count[Scene::code_of(instances[i].shape, instances[i].color)] == 1)
      unique.push_back(i);

  size_t target;
  if (!unique.empty()) {
    target = unique[rng.below(unique.size())];
  } else {
    target = rng.below(instances.size());
    auto& inst = instances[target];
    for (int color = 1; color <= 4; ++color) {
      if (combo_count[Scene::code_of(inst.shape, color)] == 0) {
        const uint8_t code = Scene::code_of(inst.shape, color);
        for (int r = inst.r0; r <= inst.r1; ++r)
          for (int c = inst.c0; c <= inst.c1; ++c)
            if (scene.cells[static_cast<size_t>(r) * Scene::kGrid + c] != 0)
              scene.cells[static_cast<size_t>(r) * Scene::kGrid + c] = code;
        inst.color = color;
        break;
      }
    }
  }

  const auto& inst = instances[target];
  const auto b = instance_bounds_0_1000(inst);
  s.truth_box = {{b.x_min, b.y_min, b.x_max, b.y_max}};
  s.truth_text = box_text(*s.truth_box);
  const std::string core = replace_all(
      replace_all(prompts::kVgCore, "{c}", color_names()[inst.color - 1]), "{s}",
      shape_names()[inst.shape - 1]);
  s.prompt_text = make_prompt(TaskKind::VG, core);
  s.scene = std::move(scene);
  return s;
}

std::string rle_encode(const std::vector<uint8_t>& cells) {
  std::ostringstream out;
  size_t i = 0;
  bool first = true;
  while (i < cells.size()) {
    size_t j = i;
    while (j < cells.size() && cells[j] == cells[i]) ++j;
    if (!first) out << ',';
    out << int(cells[i]) << ':' << (j - i);
    first = false;
    i = j;
  }
  return out.str();
}

std::vector<uint8_t> rle_decode(const std::string& text, size_t expect) {
  std::vector<uint8_t> cells;
  cells.reserve(expect);
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    const size_t colon = part.find(':');
    if (colon == std::string::npos) throw std::runtime_error("bad RLE segment '" + part + "'");
    const int code = std::stoi(part.substr(0, colon));
    const long run = std::stol(part.substr(colon + 1));
    if (code < 0 || code > 32 || run <= 0) throw std::runtime_error("bad RLE values");
    cells.insert(cells.end(), static_cast<size_t>(run), static_cast<uint8_t>(code));
  }
  if (cells.size() != expect)
    throw std::runtime_error("RLE length " + std::to_string(cells.size()) + ", expected " +
                             std::to_string(expect));
  return cells;
}

json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["kind"] = task_kind_name(s.kind);
  j["seed"] = s.scene.seed;
  j["cells"] = rle_encode(s.scene.cells);
  j["prompt"] = s.prompt_text;
  j["truth"] = s.truth_text;
  if (s.truth_box) j["truth_box"] = *s.truth_box;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.kind = task_kind_from_name(j.at("kind").get<std::string>());
  s.scene.seed = j.at("seed").get<uint64_t>();
  s.scene.cells = rle_decode(j.at("cells").get<std::string>(),
                             static_cast<size_t>(Scene::kGrid) * Scene::kGrid);
  s.prompt_text = j.at("prompt").get<std::string>();
  s.truth_text = j.at("truth").get<std::string>();
  if (j.contains("truth_box")) s.truth_box = j.at("truth_box").get<std::array<int, 4>>();
  return s;
}

}  // namespace

void FewShotSpec::validate() const {
  if (n_vqa < 0 || n_cls < 0 || n_vg < 0)
    throw std::invalid_argument("FewShotSpec: negative count");
  if (total() < 1) throw std::invalid_argument("FewShotSpec: need at least one sample");
}

std::string make_prompt(TaskKind kind, const std::string& core) {
  if (core.empty()) throw std::invalid_argument("make_prompt: empty question core");
  const std::string& suffix =
      kind == TaskKind::VG ? prompts::kGroundingSuffix : prompts::kAnswerSuffix;
  return core + " " + suffix;
}

std::vector<Sample> render_pool(int pool_size, uint64_t seed) {
  if (pool_size < 3) throw std::invalid_argument("render_pool: pool_size must be >= 3");
  std::vector<Sample> pool;
  pool.reserve(pool_size);
  int vqa_subtype = 0;
  for (int i = 0; i < pool_size; ++i) {
    Rng rng = Rng(seed).fork(0x9001).fork(static_cast<uint64_t>(i));
    Scene scene = generate_scene(rng.next_u64());
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "s%06d", i);
    switch (i % 3) {
      case 0: pool.push_back(make_vqa_sample(std::move(scene), idbuf, vqa_subtype++, rng)); break;
      case 1: pool.push_back(make_cls_sample(std::move(scene), idbuf)); break;
      default: pool.push_back(make_vg_sample(std::move(scene), idbuf, rng));
    }
  }
  return pool;
}

std::vector<Sample> filter_by_kind(const std::vector<Sample>& samples, TaskKind kind) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.kind == kind) out.push_back(s);
  return out;
}

Dataset sample_fewshot(const std::vector<Sample>& pool, const FewShotSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  Rng rng = Rng(spec.seed).fork(0xfe35);
  const struct {
    TaskKind kind;
    int want;
    const char* name;
  } plan[] = {{TaskKind::VQA, spec.n_vqa, "VQA"},
              {TaskKind::CLS, spec.n_cls, "CLS"},
              {TaskKind::VG, spec.n_vg, "VG"}};
  for (const auto& p : plan) {
    if (p.want == 0) continue;
    std::vector<size_t> idx;
    for (size_t i = 0; i < pool.size(); ++i)
      if (pool[i].kind == p.kind) idx.push_back(i);
    if (static_cast<int>(idx.size()) < p.want)
      throw std::invalid_argument(std::string("sample_fewshot: pool has only ") +
                                  std::to_string(idx.size()) + " " + p.name + " samples, need " +
                                  std::to_string(p.want));
    // seeded Fisher-Yates, take the first `want`
    for (size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.below(i + 1)]);
    for (int k = 0; k < p.want; ++k) ds.samples.push_back(pool[idx[k]]);
  }
  return ds;
}

Dataset duplicate_to_batch(const Dataset& dataset, int batch_size) {
  const int n = static_cast<int>(dataset.samples.size());
  if (n < 1) throw std::invalid_argument("duplicate_to_batch: empty dataset");
  if (batch_size < n)
    throw std::invalid_argument("duplicate_to_batch: batch_size " + std::to_string(batch_size) +
                                " smaller than dataset size " + std::to_string(n));
  Dataset out;
  out.spec = dataset.spec;
  out.pool_id = dataset.pool_id;
  out.samples.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) out.samples.push_back(dataset.samples[i % n]);
  return out;
}

FewShotSpec preset_spec(const std::string& name, uint64_t seed) {
  static const std::map<std::string, std::array<int, 3>> kPresets = {
      {"pi1V", {1, 0, 0}},     {"pi1C", {0, 1, 0}},      {"pi1G", {0, 0, 1}},
      {"pi2VC", {1, 1, 0}},    {"pi2G", {0, 0, 2}},      {"pi4VC", {2, 2, 0}},
      {"pi4VCG", {2, 1, 1}},   {"pi8VC", {4, 4, 0}},     {"pi8VCG", {3, 3, 2}},
      {"pi16VC", {8, 8, 0}},   {"pi32VCG", {10, 12, 10}}, {"pi64VCG", {20, 22, 22}},
      {"pi128VCG", {42, 42, 44}},
  };
  auto it = kPresets.find(name);
  if (it == kPresets.end()) throw std::invalid_argument("unknown preset: " + name);
  FewShotSpec spec;
  spec.n_vqa = it->second[0];
  spec.n_cls = it->second[1];
  spec.n_vg = it->second[2];
  spec.seed = seed;
  return spec;
}

std::vector<std::string> preset_names() {
  return {"pi1V",  "pi1C",  "pi1G",   "pi2VC",   "pi2G",    "pi4VC",   "pi4VCG",
          "pi8VC", "pi8VCG", "pi16VC", "pi32VCG", "pi64VCG", "pi128VCG"};
}

namespace {

void save_samples_impl(const std::string& path, const std::vector<Sample>& samples,
                       const json& header) {
  std::ostringstream out;
  out << header.dump() << "\n";
  for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
  write_file(path, out.str());
}

}  // namespace

void save_pool(const std::string& path, const std::vector<Sample>& samples, uint64_t seed,
               const std::string& system_prompt) {
  json h;
  h["type"] = "pool";
  h["version"] = 1;
  h["count"] = samples.size();
  h["seed"] = seed;
  h["system_prompt"] = system_prompt;
  save_samples_impl(path, samples, h);
}

void save_dataset(const std::string& path, const Dataset& dataset,
                  const std::string& system_prompt) {
  json h;
  h["type"] = "dataset";
  h["version"] = 1;
  h["count"] = dataset.samples.size();
  h["seed"] = dataset.spec.seed;
  h["system_prompt"] = system_prompt;
  h["spec"] = {{"n_vqa", dataset.spec.n_vqa},
               {"n_cls", dataset.spec.n_cls},
               {"n_vg", dataset.spec.n_vg},
               {"seed", dataset.spec.seed}};
  h["pool_id"] = dataset.pool_id;
  save_samples_impl(path, dataset.samples, h);
}

std::vector<Sample> load_samples(const std::string& path, SampleFileHeader* header) {
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  SampleFileHeader hdr;
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (line_no == 1) {
        hdr.type = j.at("type").get<std::string>();
        hdr.count = j.at("count").get<int>();
        hdr.seed = j.at("seed").get<uint64_t>();
        hdr.system_prompt = j.value("system_prompt", "");
        if (j.contains("spec")) {
          hdr.spec.n_vqa = j["spec"].value("n_vqa", 0);
          hdr.spec.n_cls = j["spec"].value("n_cls", 0);
          hdr.spec.n_vg = j["spec"].value("n_vg", 0);
          hdr.spec.seed = j["spec"].value("seed", uint64_t(0));
        }
        hdr.pool_id = j.value("pool_id", "");
      } else {
        samples.push_back(sample_from_json(j));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) throw std::runtime_error(path + ": empty sample file");
  if (static_cast<int>(samples.size()) != hdr.count)
    throw std::runtime_error(path + ": line " + std::to_string(line_no + 1) +
                             ": truncated file, expected " + std::to_string(hdr.count) +
                             " records, found " + std::to_string(samples.size()));
  if (header) *header = hdr;
  return samples;
}

Dataset load_dataset(const std::string& path) {
  SampleFileHeader hdr;
  Dataset ds;
  ds.samples = load_samples(path, &hdr);
  if (hdr.type != "dataset")
    throw std::runtime_error(path + ": expected a dataset file, found '" + hdr.type + "'");
  ds.spec = hdr.spec;
  ds.pool_id = hdr.pool_id;
  return ds;
}

}  // namespace rlvr
