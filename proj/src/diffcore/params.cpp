#include "condreg/params.hpp"

#include "condreg/error.hpp"

namespace condreg {

void ParamSlice::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSlice::contains(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& ParamSlice::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamSlice::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamSlice&>(*this).at(name));
}

std::size_t ParamSlice::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

bool same_layout(const ParamSlice& a, const ParamSlice& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].first != b.entries_[i].first) return false;
    if (a.entries_[i].second.shape() != b.entries_[i].second.shape()) return false;
  }
  return true;
}

VarMap bind(Tape& tape, const ParamSlice& params, bool trainable) {
  VarMap vars;
  for (const auto& [name, t] : params.entries()) vars[name] = trainable ? tape.parameter(t) : tape.constant(t);
  return vars;
}

const Var& lookup(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second;
}

}  // namespace condreg
