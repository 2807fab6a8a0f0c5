#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlvr/sample.hpp"

namespace rlvr {

struct FewShotSpec {
  int n_vqa = 0, n_cls = 0, n_vg = 0;
  uint64_t seed = 0;

  int total() const { return n_vqa + n_cls + n_vg; }
  void validate() const;
};

struct Dataset {
  std::vector<Sample> samples;
  FewShotSpec spec;
  std::string pool_id;  // hash or path of the source pool
};

// Deterministic pool of samples, kinds balanced to within one (order VQA,
// CLS, VG repeating). Every ground truth is derived from the generated grid.
std::vector<Sample> render_pool(int pool_size, uint64_t seed);

// Appends the task family's question suffix to a non-empty question core.
std::string make_prompt(TaskKind kind, const std::string& core);

// Uniform draw without replacement per kind (seeded); output order is the
// draw order, VQA block then CLS then VG.
Dataset sample_fewshot(const std::vector<Sample>& pool, const FewShotSpec& spec);

// Round-robin duplication (out[i] = in[i % n]) up to exactly batch_size;
// per-sample multiplicities differ by at most one.
Dataset duplicate_to_batch(const Dataset& dataset, int batch_size = 128);

std::vector<Sample> filter_by_kind(const std::vector<Sample>& samples, TaskKind kind);

// Named few-shot mixes (pi1V .. pi128VCG). Throws on unknown name.
FewShotSpec preset_spec(const std::string& name, uint64_t seed);
std::vector<std::string> preset_names();

// ---- line-delimited sample files --------------------------------------
// First line: JSON header (type, version, count, seed, system_prompt, and the
// few-shot spec for datasets). Then one JSON record per sample with the grid
// stored as run-length-encoded cell codes. load(save(x)) == x.
void save_pool(const std::string& path, const std::vector<Sample>& samples, uint64_t seed,
               const std::string& system_prompt);
void save_dataset(const std::string& path, const Dataset& dataset,
                  const std::string& system_prompt);

struct SampleFileHeader {
  std::string type;  // "pool" or "dataset"
  int count = 0;
  uint64_t seed = 0;
  std::string system_prompt;
  FewShotSpec spec;      // datasets only
  std::string pool_id;   // datasets only
};

std::vector<Sample> load_samples(const std::string& path, SampleFileHeader* header = nullptr);
Dataset load_dataset(const std::string& path);

}  // namespace rlvr
