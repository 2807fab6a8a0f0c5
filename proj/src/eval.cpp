#include "rlvr/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rlvr/checkpoint.hpp"
#include "rlvr/ioutil.hpp"
#include "rlvr/trainer.hpp"

namespace rlvr {

using nlohmann::json;

namespace {

constexpr uint64_t kEvalDomain = 0xe5a1;

std::string opt_str(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

json opt_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

std::string EvalReport::to_json() const {
  json j;
  j["checkpoint_step"] = checkpoint_step;
  j["cls_accuracy"] = opt_json(cls_accuracy);
  j["vqa_accuracy"] = opt_json(vqa_accuracy);
  j["vg_precision_at_50"] = opt_json(vg_precision_at_50);
  j["format_rate"] = format_rate;
  j["mean_total_reward"] = mean_total_reward;
  j["n_cls"] = n_cls;
  j["n_vqa"] = n_vqa;
  j["n_vg"] = n_vg;
  j["unparseable"] = unparseable;
  j["eval_seed"] = eval_seed;
  j["eval_set_id"] = eval_set_id;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.checkpoint_step = j.at("checkpoint_step").get<int>();
  r.cls_accuracy = opt_from_json(j, "cls_accuracy");
  r.vqa_accuracy = opt_from_json(j, "vqa_accuracy");
  r.vg_precision_at_50 = opt_from_json(j, "vg_precision_at_50");
  r.format_rate = j.at("format_rate").get<double>();
  r.mean_total_reward = j.at("mean_total_reward").get<double>();
  r.n_cls = j.at("n_cls").get<int>();
  r.n_vqa = j.at("n_vqa").get<int>();
  r.n_vg = j.at("n_vg").get<int>();
  r.unparseable = j.at("unparseable").get<int>();
  r.eval_seed = j.at("eval_seed").get<uint64_t>();
  r.eval_set_id = j.at("eval_set_id").get<std::string>();
  return r;
}

EvalReport evaluate_with(const CompletionFn& complete, const std::vector<Sample>& eval_set,
                         const RewardConfig& reward_cfg, const std::string& eval_set_id,
                         int checkpoint_step, std::vector<PredictionLog>* log) {
  if (eval_set.empty()) throw std::invalid_argument("evaluate: empty eval set");
  const int n = static_cast<int>(eval_set.size());
  std::vector<PredictionLog> rows(n);

  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      const Sample& s = eval_set[i];
      PredictionLog& row = rows[i];
      row.id = s.id;
      row.completion = complete(s, i);
      row.reward = score(s, row.completion, reward_cfg);
      if (s.kind == TaskKind::VG && s.truth_box) {
        const auto parsed = parse_answer(row.completion);
        if (parsed.bbox) row.iou_value = iou(*parsed.bbox, BBox::from_array(*s.truth_box));
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport rep;
  rep.checkpoint_step = checkpoint_step;
  rep.eval_set_id = eval_set_id;
  int cls_hit = 0, vqa_hit = 0, vg_hit = 0;
  double reward_sum = 0.0, fmt_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = eval_set[i];
    const auto& row = rows[i];
    reward_sum += row.reward.total;
    fmt_sum += row.reward.format;
    const auto parsed = parse_answer(row.completion);
    const bool parseable =
        parsed.answer_text && (s.kind != TaskKind::VG || parsed.bbox.has_value());
    if (!parseable) ++rep.unparseable;
    switch (s.kind) {
      case TaskKind::CLS:
        ++rep.n_cls;
        if (row.reward.accuracy == 1.0) ++cls_hit;
        break;
      case TaskKind::VQA:
        ++rep.n_vqa;
        if (row.reward.accuracy == 1.0) ++vqa_hit;
        break;
      case TaskKind::VG:
        ++rep.n_vg;
        if (row.iou_value && *row.iou_value >= 0.5) ++vg_hit;
        break;
    }
  }
  rep.format_rate = fmt_sum / n;
  rep.mean_total_reward = reward_sum / n;
  if (rep.n_cls > 0) rep.cls_accuracy = double(cls_hit) / rep.n_cls;
  if (rep.n_vqa > 0) rep.vqa_accuracy = double(vqa_hit) / rep.n_vqa;
  if (rep.n_vg > 0) rep.vg_precision_at_50 = double(vg_hit) / rep.n_vg;
  if (log) *log = std::move(rows);
  return rep;
}

EvalReport evaluate(const Policy& policy, const std::vector<Sample>& eval_set,
                    const RewardConfig& reward_cfg, double temperature, uint64_t eval_seed,
                    int max_new_tokens, const std::string& eval_set_id, int checkpoint_step,
                    std::vector<PredictionLog>* log) {
  const Rng base = Rng(eval_seed).fork(kEvalDomain);
  const CompletionFn fn = [&](const Sample& s, int index) {
    const auto completions =
        policy.sample(policy.encode_prompt(s.prompt_text), s.scene.render(), 1, temperature,
                      max_new_tokens, base.fork(static_cast<uint64_t>(index)));
    return completions[0].text;
  };
  EvalReport rep = evaluate_with(fn, eval_set, reward_cfg, eval_set_id, checkpoint_step, log);
  rep.eval_seed = eval_seed;
  return rep;
}

void save_prediction_log(const std::string& path, const std::vector<PredictionLog>& log) {
  std::ostringstream out;
  json h;
  h["type"] = "predictions";
  h["version"] = 1;
  h["count"] = log.size();
  h["seed"] = 0;
  out << h.dump() << "\n";
  for (const auto& row : log) {
    json j;
    j["id"] = row.id;
    j["completion"] = row.completion;
    j["format"] = row.reward.format;
    j["accuracy"] = row.reward.accuracy;
    j["total"] = row.reward.total;
    if (row.iou_value) j["iou"] = *row.iou_value;
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

SweepResult sweep(const std::string& checkpoint_dir, const std::vector<Sample>& eval_set,
                  const Vocabulary& vocab, const RewardConfig& reward_cfg, double temperature,
                  uint64_t eval_seed, int max_new_tokens, const std::string& eval_set_id) {
  namespace fs = std::filesystem;
  std::vector<std::pair<int, std::string>> ckpts;
  if (fs::is_directory(checkpoint_dir)) {
    for (const auto& entry : fs::directory_iterator(checkpoint_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("ckpt_", 0) == 0 && name.size() >= 9 &&
          name.substr(name.size() - 4) == ".bin")
        ckpts.emplace_back(std::stoi(name.substr(5, name.size() - 9)), entry.path().string());
    }
  }
  if (ckpts.empty())
    throw std::runtime_error("sweep: no checkpoints found in " + checkpoint_dir);
  std::sort(ckpts.begin(), ckpts.end());

  SweepResult out;
  for (const auto& [step, path] : ckpts) {
    const Checkpoint ck = load_checkpoint(path);
    const Policy policy = restore_policy(ck, vocab);
    out.reports.push_back(evaluate(policy, eval_set, reward_cfg, temperature, eval_seed,
                                   max_new_tokens, eval_set_id, step));
  }

  const auto consider = [&](const char* metric, const std::optional<double>& v, int step) {
    if (!v) return;
    auto it = out.best_step_by_metric.find(metric);
    bool better = it == out.best_step_by_metric.end();
    if (!better) {
      // reports are in ascending step order; strict > keeps the earliest step on ties
      const auto& cur = out.reports;
      double best_v = -1.0;
      for (const auto& r : cur)
        if (r.checkpoint_step == it->second) {
          if (std::string(metric) == "cls_accuracy") best_v = r.cls_accuracy.value_or(-1);
          else if (std::string(metric) == "vqa_accuracy") best_v = r.vqa_accuracy.value_or(-1);
          else if (std::string(metric) == "vg_precision_at_50")
            best_v = r.vg_precision_at_50.value_or(-1);
          else if (std::string(metric) == "format_rate") best_v = r.format_rate;
          else best_v = r.mean_total_reward;
        }
      better = *v > best_v;
    }
    if (better) out.best_step_by_metric[metric] = step;
  };
  for (const auto& r : out.reports) {
    consider("cls_accuracy", r.cls_accuracy, r.checkpoint_step);
    consider("vqa_accuracy", r.vqa_accuracy, r.checkpoint_step);
    consider("vg_precision_at_50", r.vg_precision_at_50, r.checkpoint_step);
    consider("format_rate", r.format_rate, r.checkpoint_step);
    consider("mean_total_reward", r.mean_total_reward, r.checkpoint_step);
  }

  std::ostringstream table;
  table << "step      cls      vqa      vg@50    format   reward   unparseable\n";
  for (const auto& r : out.reports) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-9d %-8s %-8s %-8s %-8.4f %-8.4f %d\n", r.checkpoint_step,
                  opt_str(r.cls_accuracy).c_str(), opt_str(r.vqa_accuracy).c_str(),
                  opt_str(r.vg_precision_at_50).c_str(), r.format_rate, r.mean_total_reward,
                  r.unparseable);
    table << buf;
  }
  table << "best:";
  for (const auto& [metric, step] : out.best_step_by_metric)
    table << " " << metric << "=step" << step;
  table << "\n";
  out.table_text = table.str();
  return out;
}

CompareResult compare(const std::vector<EvalReport>& reports,
                      const std::vector<std::string>& labels) {
  if (reports.size() < 2) throw std::invalid_argument("compare: need at least two reports");
  if (labels.size() != reports.size())
    throw std::invalid_argument("compare: labels misaligned with reports");

  CompareResult out;
  for (size_t i = 1; i < reports.size(); ++i)
    if (reports[i].eval_set_id != reports[0].eval_set_id) {
      out.warning = "warning: reports evaluate different eval sets";
      break;
    }

  const auto val = [](const EvalReport& r, int col) -> std::optional<double> {
    switch (col) {
      case 0: return r.cls_accuracy;
      case 1: return r.vqa_accuracy;
      case 2: return r.vg_precision_at_50;
      case 3: return r.format_rate;
      default: return r.mean_total_reward;
    }
  };
  static const char* kCols[] = {"cls_accuracy", "vqa_accuracy", "vg_precision_at_50",
                                "format_rate", "mean_total_reward"};

  std::ostringstream text, csv;
  if (!out.warning.empty()) text << "# " << out.warning << "\n";
  csv << "label";
  for (const char* c : kCols) csv << ',' << c << ',' << c << "_delta";
  csv << "\n";
  text << "label            ";
  for (const char* c : kCols) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-22s", c);
    text << buf;
  }
  text << "\n";
  for (size_t i = 0; i < reports.size(); ++i) {
    csv << labels[i];
    char line[512];
    std::snprintf(line, sizeof(line), "%-16s ", labels[i].c_str());
    text << line;
    for (int col = 0; col < 5; ++col) {
      const auto v = val(reports[i], col);
      const auto v0 = val(reports[0], col);
      const double delta = (v && v0) ? *v - *v0 : 0.0;
      if (v) {
        char cell[64];
        std::snprintf(cell, sizeof(cell), "%.4f (%+.4f)      ", *v, delta);
        text << cell;
        csv << ',' << *v << ',' << delta;
      } else {
        text << "n/a                   ";
        csv << ",n/a,n/a";
      }
    }
    text << "\n";
    csv << "\n";
  }
  out.table_text = text.str();
  out.table_csv = csv.str();
  return out;
}

}  // namespace rlvr
