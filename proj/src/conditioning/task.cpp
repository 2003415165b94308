#include "condreg/task.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "condreg/error.hpp"
#include "json.hpp"

namespace condreg {

using nlohmann::json;

std::string to_string(RegType t) { return t == RegType::inter ? "inter" : "intra"; }

RegType parse_reg_type(const std::string& s) {
  if (s == "inter") return RegType::inter;
  if (s == "intra") return RegType::intra;
  throw ValidationError("reg_type must be \"inter\" or \"intra\", got \"" + s + "\"");
}

void TaskDescriptor::validate() const {
  if (n_tasks < 1) throw ValidationError("task registry must define at least one task");
  if (task_index < 0 || task_index >= n_tasks) {
    throw ValidationError("task index " + std::to_string(task_index) + " outside [0, " + std::to_string(n_tasks) + ")");
  }
  if (!(lambda_prior >= 0.0)) throw ValidationError("task \"" + name + "\" has a negative lambda");
  if (!(dice_weight >= 0.0)) throw ValidationError("task \"" + name + "\" has a negative dice_weight");
}

std::vector<float> one_hot(int index, int n) {
  if (n < 1 || index < 0 || index >= n) throw ValidationError("one_hot index outside [0, n)");
  std::vector<float> v(static_cast<std::size_t>(n), 0.0f);
  v[static_cast<std::size_t>(index)] = 1.0f;
  return v;
}

std::array<float, 2> reg_type_encoding(RegType t) {
  return t == RegType::inter ? std::array<float, 2>{0.0f, 1.0f} : std::array<float, 2>{1.0f, 0.0f};
}

TaskRegistry::TaskRegistry(std::vector<TaskDescriptor> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ValidationError("task registry is empty");
  std::set<std::string> names;
  int max_index = -1;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw ValidationError("task registry entry without a name");
    if (!names.insert(e.name).second) throw ValidationError("duplicate task name \"" + e.name + "\"");
    if (e.task_index < 0) throw ValidationError("task \"" + e.name + "\" has a negative index");
    max_index = std::max(max_index, e.task_index);
  }
  n_tasks_ = max_index + 1;
  std::set<int> seen;
  for (auto& e : entries_) {
    e.n_tasks = n_tasks_;
    e.validate();
    seen.insert(e.task_index);
  }
  if (static_cast<int>(seen.size()) != n_tasks_) throw ValidationError("task indices must cover 0..n-1 without gaps");
}

TaskRegistry TaskRegistry::from_json_text(const std::string& text) {
  std::vector<TaskDescriptor> entries;
  try {
    const json j = json::parse(text);
    const json& list = j.is_object() ? j.at("tasks") : j;
    for (const auto& item : list) {
      TaskDescriptor t;
      t.name = item.at("name").get<std::string>();
      t.task_index = item.at("index").get<int>();
      t.reg_type = parse_reg_type(item.at("reg_type").get<std::string>());
      t.lambda_prior = item.at("lambda").get<double>();
      t.dice_weight = item.value("dice_weight", 0.0);
      entries.push_back(t);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed task registry: ") + e.what());
  }
  return TaskRegistry(std::move(entries));
}

TaskRegistry TaskRegistry::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read task registry " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

std::string TaskRegistry::to_json_text() const {
  json list = json::array();
  for (const auto& e : entries_) {
    list.push_back({{"name", e.name},
                    {"index", e.task_index},
                    {"reg_type", to_string(e.reg_type)},
                    {"lambda", e.lambda_prior},
                    {"dice_weight", e.dice_weight}});
  }
  return list.dump(2);
}

void TaskRegistry::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write task registry " + path.string());
  os << to_json_text() << '\n';
}

bool TaskRegistry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const TaskDescriptor& e) { return e.name == name; });
}

const TaskDescriptor& TaskRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  std::string known;
  for (const auto& e : entries_) known += (known.empty() ? "" : ", ") + e.name;
  throw ValidationError("unknown task \"" + name + "\"; registered tasks: " + known);
}

}  // namespace condreg
