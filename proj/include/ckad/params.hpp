#pragma once

#include "ckad/types.hpp"

#include <string>
#include <vector>

namespace ckad {

/// Named dense tensors packed into one flat parameter vector.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index size() const { return rows * cols; }
  };

  const Entry& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    entries_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
    return entries_.back();
  }

  const Entry& at(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw ArgumentError("no parameter named '" + name + "'");
  }
  bool contains(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  Eigen::Index size() const { return size_; }

 private:
  std::vector<Entry> entries_;
  Eigen::Index size_ = 0;
};

template <typename Scalar>
Eigen::Map<Matrix<Scalar>> view(Vector<Scalar>& flat, const ParamLayout::Entry& e) {
  return {flat.data() + e.offset, e.rows, e.cols};
}

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> view(const Vector<Scalar>& flat, const ParamLayout::Entry& e) {
  return {flat.data() + e.offset, e.rows, e.cols};
}

}  // namespace ckad
