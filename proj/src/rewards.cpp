#include "rlvr/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace rlvr {

namespace {

const std::string kROpen = "<reasoning>";
const std::string kRClose = "</reasoning>";
const std::string kAOpen = "<answer>";
const std::string kAClose = "</answer>";

bool whitespace_only(const std::string& s, size_t from, size_t to) {
  for (size_t i = from; i < to && i < s.size(); ++i)
    if (!std::isspace(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

size_t count_occurrences(const std::string& s, const std::string& needle) {
  size_t n = 0, pos = 0;
  while ((pos = s.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

std::string trim_copy(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Parses a full integer field ("  123  "); nullopt on anything else.
std::optional<long> parse_int_field(const std::string& field) {
  const std::string t = trim_copy(field);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (errno != 0 || end != t.c_str() + t.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::CLS: return "CLS";
    case TaskKind::VQA: return "VQA";
    default: return "VG";
  }
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "CLS") return TaskKind::CLS;
  if (name == "VQA") return TaskKind::VQA;
  if (name == "VG") return TaskKind::VG;
  throw std::invalid_argument("unknown task kind: " + name);
}

std::string Sample::reference_completion_text() const {
  return "<reasoning> observe grid </reasoning> <answer> " + truth_text + " </answer>";
}

BBox::BBox(int x0, int y0, int x1, int y1) : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {
  if (!(0 <= x_min && x_min <= x_max && x_max <= 1000 && 0 <= y_min && y_min <= y_max &&
        y_max <= 1000))
    throw std::invalid_argument("BBox: coordinates violate 0 <= min <= max <= 1000");
}

BBox BBox::canonicalize(long x0, long y0, long x1, long y1) {
  const auto cl = [](long v) { return static_cast<int>(std::clamp(v, 0l, 1000l)); };
  int a = cl(x0), b = cl(y0), c = cl(x1), d = cl(y1);
  return BBox(std::min(a, c), std::min(b, d), std::max(a, c), std::max(b, d));
}

void RewardConfig::validate() const {
  if (!(0.0 <= iou_lo && iou_lo < iou_hi && iou_hi <= 1.0))
    throw std::invalid_argument("RewardConfig: need 0 <= iou_lo < iou_hi <= 1");
  if (format_weight < 0.0 || accuracy_weight < 0.0)
    throw std::invalid_argument("RewardConfig: weights must be non-negative");
}

std::string RewardConfig::to_kv() const {
  std::ostringstream out;
  out << "iou_hi = " << iou_hi << "\n"
      << "iou_lo = " << iou_lo << "\n"
      << "format_weight = " << format_weight << "\n"
      << "accuracy_weight = " << accuracy_weight << "\n"
      << "case_fold = " << (case_fold ? 1 : 0) << "\n"
      << "trim = " << (trim ? 1 : 0) << "\n";
  return out.str();
}

RewardConfig RewardConfig::from_kv(const std::string& text) {
  RewardConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim_copy(line.substr(0, eq));
    const std::string val = trim_copy(line.substr(eq + 1));
    if (key.empty() || val.empty()) continue;
    if (key == "iou_hi") cfg.iou_hi = std::stod(val);
    else if (key == "iou_lo") cfg.iou_lo = std::stod(val);
    else if (key == "format_weight") cfg.format_weight = std::stod(val);
    else if (key == "accuracy_weight") cfg.accuracy_weight = std::stod(val);
    else if (key == "case_fold") cfg.case_fold = val != "0";
    else if (key == "trim") cfg.trim = val != "0";
    else throw std::invalid_argument("RewardConfig: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

int verify_format(const std::string& text) {
  if (count_occurrences(text, kROpen) != 1 || count_occurrences(text, kRClose) != 1 ||
      count_occurrences(text, kAOpen) != 1 || count_occurrences(text, kAClose) != 1)
    return 0;
  const size_t ro = text.find(kROpen);
  const size_t rc = text.find(kRClose);
  const size_t ao = text.find(kAOpen);
  const size_t ac = text.find(kAClose);
  if (!(ro < rc && rc < ao && ao < ac)) return 0;
  // note: kRClose contains no kROpen etc., so positions can't alias
  if (!whitespace_only(text, 0, ro)) return 0;
  if (!whitespace_only(text, rc + kRClose.size(), ao)) return 0;
  if (!whitespace_only(text, ac + kAClose.size(), text.size())) return 0;
  return 1;
}

ParsedOutput parse_answer(const std::string& text) {
  ParsedOutput out;
  const size_t ro = text.find(kROpen);
  if (ro != std::string::npos) {
    const size_t rc = text.find(kRClose, ro + kROpen.size());
    if (rc != std::string::npos)
      out.reasoning_text = trim_copy(text.substr(ro + kROpen.size(), rc - ro - kROpen.size()));
  }
  const size_t ao = text.find(kAOpen);
  if (ao == std::string::npos) return out;
  const size_t ac = text.find(kAClose, ao + kAOpen.size());
  if (ac == std::string::npos) return out;
  const std::string answer = trim_copy(text.substr(ao + kAOpen.size(), ac - ao - kAOpen.size()));
  out.answer_text = answer;

  // Box parse: the whole answer must be [[ i , i , i , i ]].
  if (answer.size() >= 4 && answer.substr(0, 2) == "[[" &&
      answer.substr(answer.size() - 2) == "]]") {
    const std::string inner = answer.substr(2, answer.size() - 4);
    std::vector<long> vals;
    size_t start = 0;
    bool ok = true;
    while (start <= inner.size()) {
      const size_t comma = inner.find(',', start);
      const std::string field =
          comma == std::string::npos ? inner.substr(start) : inner.substr(start, comma - start);
      const auto v = parse_int_field(field);
      if (!v) {
        ok = false;
        break;
      }
      vals.push_back(*v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (ok && vals.size() == 4)
      out.bbox = BBox::canonicalize(vals[0], vals[1], vals[2], vals[3]);
  }
  return out;
}

std::string normalize_answer(const std::string& s, const RewardConfig& cfg) {
  std::string out = cfg.trim ? trim_copy(s) : s;
  if (cfg.case_fold)
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

int exact_match_reward(const std::string& pred, const std::string& truth,
                       const RewardConfig& cfg) {
  if (truth.empty()) throw std::invalid_argument("exact_match_reward: empty truth");
  return normalize_answer(pred, cfg) == normalize_answer(truth, cfg) ? 1 : 0;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double area_a = double(a.x_max - a.x_min) * double(a.y_max - a.y_min);
  const double area_b = double(b.x_max - b.x_min) * double(b.y_max - b.y_min);
  const double uni = area_a + area_b - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

double quantized_iou_reward(double v, const RewardConfig& cfg) {
  if (!(v >= 0.0 && v <= 1.0))
    throw std::invalid_argument("quantized_iou_reward: value outside [0,1]");
  if (v >= cfg.iou_hi) return 1.0;
  if (v >= cfg.iou_lo) return v;
  return 0.0;
}

RewardBreakdown score(const Sample& sample, const std::string& completion_text,
                      const RewardConfig& cfg) {
  RewardBreakdown out;
  out.format = verify_format(completion_text);
  const ParsedOutput parsed = parse_answer(completion_text);
  double base = 0.0;
  if (parsed.answer_text) {
    if (sample.kind == TaskKind::VG) {
      if (parsed.bbox && sample.truth_box)
        base = iou(*parsed.bbox, BBox::from_array(*sample.truth_box));
    } else {
      base = exact_match_reward(*parsed.answer_text, sample.truth_text, cfg);
    }
  }
  // One quantizer for every task family; on binary values it is the identity.
  out.accuracy = quantized_iou_reward(base, cfg);
  out.total = cfg.format_weight * out.format + cfg.accuracy_weight * out.accuracy;
  return out;
}

}  // namespace rlvr
