#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "condreg/tape.hpp"

namespace condreg {

/// Ordered named tensors. Order is the serialization order.
class ParamSlice {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t scalar_count() const;
  bool operator==(const ParamSlice&) const = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;

  friend bool same_layout(const ParamSlice&, const ParamSlice&);
};

bool same_layout(const ParamSlice& a, const ParamSlice& b);

using VarMap = std::map<std::string, Var>;

/// Puts every tensor on the tape, as parameters when trainable.
VarMap bind(Tape& tape, const ParamSlice& params, bool trainable);
const Var& lookup(const VarMap& vars, const std::string& name);

}  // namespace condreg
