#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pfv2/tensor.hpp"

namespace pfv2 {

/// Ordered, named collection of learnable tensors. Insertion order is the
/// serialization order and the optimizer's iteration order.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor value);

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<Tensor> tensors() const;
  void zero_grad();

  /// Deep copy: new leaves with the same values and requires_grad flags.
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Error raised when a checkpoint file cannot be decoded.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "PFV2" checkpoint: magic, u32 version, u32 count, then per tensor
/// u32 name length, UTF-8 name, u32 rank, u64 dims, f64 payload (all LE).
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

std::vector<unsigned char> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<unsigned char>& bytes);

}  // namespace pfv2
