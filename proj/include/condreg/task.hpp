#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace condreg {

enum class RegType { inter, intra };

std::string to_string(RegType t);
RegType parse_reg_type(const std::string& s);

/// Anatomy-task index, inter/intra flag and the task's loss weights.
struct TaskDescriptor {
  std::string name;
  int task_index = 0;
  int n_tasks = 1;
  RegType reg_type = RegType::inter;
  double lambda_prior = 0.0;
  double dice_weight = 0.0;  // 0 disables mask supervision

  void validate() const;
};

/// n-dimensional indicator with a single 1 at `index`.
std::vector<float> one_hot(int index, int n);

/// [0, 1] for inter-subject, [1, 0] for intra-subject.
std::array<float, 2> reg_type_encoding(RegType t);

/// Named tasks loaded from JSON: a list of
/// {name, index, reg_type, lambda, dice_weight}. Several names may share an
/// index (e.g. an unseen anatomy routed through a trained task ID); every
/// index in [0, n_tasks) needs at least one entry.
class TaskRegistry {
 public:
  TaskRegistry() = default;
  explicit TaskRegistry(std::vector<TaskDescriptor> entries);

  static TaskRegistry load(const std::filesystem::path& path);
  static TaskRegistry from_json_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  std::string to_json_text() const;

  int n_tasks() const { return n_tasks_; }
  const std::vector<TaskDescriptor>& entries() const { return entries_; }
  bool contains(const std::string& name) const;

  /// Throws ValidationError listing the registered names when unknown.
  const TaskDescriptor& find(const std::string& name) const;

 private:
  std::vector<TaskDescriptor> entries_;
  int n_tasks_ = 0;
};

}  // namespace condreg
