#pragma once

#include <Eigen/Core>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace phast {

// Named store of learnable arrays. Every model component registers its
// parameters here; the graph engine reads values through views and scatters
// gradients into the paired grad buffers. Shapes are fixed at registration.
struct ParamEntry {
  std::string name;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;
  int rows = 0;
  int cols = 1;       // cols > 1 means the flat array views as rows x cols
  bool trainable = true;
  bool no_decay = false;  // physical scalars exempt from weight decay
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols = 1,
          bool trainable = true, bool no_decay = false) {
    if (index_.count(name))
      throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.rows = rows;
    e.cols = cols;
    e.value = Eigen::VectorXd::Zero(rows * cols);
    e.grad = Eigen::VectorXd::Zero(rows * cols);
    e.trainable = trainable;
    e.no_decay = no_decay;
    entries_.push_back(std::move(e));
    index_[name] = static_cast<int>(entries_.size()) - 1;
    return index_[name];
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("ParamStore: unknown name '" + name + "'");
    return it->second;
  }

  ParamEntry& at(int id) { return entries_.at(id); }
  const ParamEntry& at(int id) const { return entries_.at(id); }
  ParamEntry& at(const std::string& name) { return entries_.at(id(name)); }
  const ParamEntry& at(const std::string& name) const {
    return entries_.at(id(name));
  }

  int size() const { return static_cast<int>(entries_.size()); }

  // Matrix view of a flat entry (rows x cols, column-major storage).
  Eigen::Map<const Eigen::MatrixXd> matrix(int id) const {
    const ParamEntry& e = entries_.at(id);
    return {e.value.data(), e.rows, e.cols};
  }
  Eigen::Map<Eigen::MatrixXd> matrix_mut(int id) {
    ParamEntry& e = entries_.at(id);
    return {e.value.data(), e.rows, e.cols};
  }
  Eigen::Map<Eigen::MatrixXd> grad_matrix(int id) {
    ParamEntry& e = entries_.at(id);
    return {e.grad.data(), e.rows, e.cols};
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  // Flattened copy of every value, in registration order. Used for
  // checkpointing and for bit-compare determinism checks.
  std::vector<double> snapshot() const {
    std::vector<double> out;
    for (const auto& e : entries_)
      out.insert(out.end(), e.value.data(), e.value.data() + e.value.size());
    return out;
  }

  void restore(const std::vector<double>& snap) {
    std::size_t k = 0;
    for (auto& e : entries_) {
      if (k + e.value.size() > snap.size())
        throw std::invalid_argument("ParamStore::restore: snapshot too short");
      for (int i = 0; i < e.value.size(); ++i) e.value[i] = snap[k++];
    }
    if (k != snap.size())
      throw std::invalid_argument("ParamStore::restore: snapshot too long");
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries_mut() { return entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, int> index_;
};

}  // namespace phast
