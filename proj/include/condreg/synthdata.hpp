#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "condreg/task.hpp"
#include "condreg/volume.hpp"

namespace condreg::synth {

enum class Family { blob, ring, slab };

std::string to_string(Family f);
Family parse_family(const std::string& s);

/// One synthetic task family. sigma and amplitude (voxels) only matter for
/// intra tasks, jitter (voxels) only for inter tasks. noise is the stdev of
/// additive noise in normalized intensity units.
struct TaskSpec {
  std::string name;
  RegType reg_type = RegType::inter;
  Dims dims{32, 32, 32};
  int num_structures = 3;
  Family family = Family::blob;
  double sigma = 4.0;
  double amplitude = 3.0;
  double jitter = 2.0;
  double noise = 0.03;
  // Registry fields carried along so a benchmark is self-describing.
  int task_index = 0;
  double lambda = 0.1;
  double dice_weight = 0.0;
  bool held_out = false;  // no train split is generated

  void validate() const;
};

struct PairSample {
  Volume fixed, moving;
  LabelMap fixed_mask, moving_mask;
  std::optional<DisplacementField> gt_field;
  int task_index = 0;
};

/// Counter-based stream: the same key always yields the same sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : state_(key) {}
  std::uint64_t next();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

std::uint64_t mix(std::uint64_t x);
std::uint64_t pair_key(std::uint64_t seed, int task, int split, int index);

/// In-place separable smoothing of one scalar grid by three box passes whose
/// combined variance approximates sigma^2. Borders are clamped.
void smooth(std::vector<float>& grid, Dims dims, double sigma);

PairSample gen_intra_pair(const TaskSpec& spec, std::uint64_t seed);
PairSample gen_inter_pair(const TaskSpec& spec, std::uint64_t seed);
PairSample gen_pair(const TaskSpec& spec, std::uint64_t seed);

/// Smallest Jacobian determinant over interior voxels.
double min_interior_det(const DisplacementField& field);

struct SplitCounts {
  int train = 48;
  int val = 4;
  int test = 8;
};

inline const std::vector<std::string> kSplits = {"train", "val", "test"};

struct BenchmarkSpec {
  std::vector<TaskSpec> tasks;
  SplitCounts counts;

  void validate() const;
};

/// Two conflicting tasks: an inter "abdomen" analog (sharp, lambda 0.1, mask
/// supervised) and an intra "liver" analog (smooth, lambda 10).
BenchmarkSpec default_benchmark();

/// A third family held out of training, routed through the intra task ID.
TaskSpec unseen_task();

/// default_benchmark plus unseen_task (val and test splits only).
BenchmarkSpec unseen_benchmark();

BenchmarkSpec parse_benchmark_spec(const std::string& json_text);
BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path);
std::string to_json_text(const BenchmarkSpec& spec);

struct PairEntry {
  std::string task;
  std::string split;
  int index = 0;
  std::filesystem::path fixed, moving, fixed_mask, moving_mask;
  std::optional<std::filesystem::path> gt_field;
};

struct Manifest {
  std::filesystem::path root;  // paths in entries are relative to this
  BenchmarkSpec spec;
  std::vector<PairEntry> pairs;

  std::vector<const PairEntry*> select(const std::string& task, const std::string& split) const;
  TaskRegistry registry() const;
};

/// Writes every pair plus manifest.json and registry.json under out_dir.
Manifest make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& path_or_dir);

struct LoadedPair {
  Volume fixed, moving;
  std::optional<LabelMap> fixed_mask, moving_mask;
  std::optional<DisplacementField> gt_field;
};

/// Masks are optional on disk; a missing mask file loads as nullopt.
LoadedPair load_pair(const Manifest& m, const PairEntry& e);

}  // namespace condreg::synth
