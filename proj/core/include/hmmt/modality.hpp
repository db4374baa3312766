#pragma once

// Serialization of heterogeneous modalities into the common
// [n, t_m, d_all] layout:
//
//   | raw channels (d_m) | zero pad | positional (d_pm) | modality one-hot (|M|) |
//
// d_all is the widest d_m + d_pm + |M| over the registry, so every modality
// shares one width and can be fed to a single encoder.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmmt/tensor.hpp"

namespace hmmt {

struct ModalitySpec {
  std::string name;
  std::size_t channels = 1;     // d_m, after optional patchify
  std::size_t extra_axes = 1;   // non-channel axes feeding the positional encoding
  std::size_t freq_bands = 1;   // F_m
  double max_freq = 1.0;        // mu_m
  std::optional<std::size_t> patch_size;  // images only

  std::size_t positional_width() const { return extra_axes * (2 * freq_bands + 1); }
  void validate() const;
  bool operator==(const ModalitySpec&) const = default;
};

class ModalityRegistry {
 public:
  // Returns the one-hot index assigned to the new entry.
  std::size_t add(ModalitySpec spec);
  // `alias` resolves to the same entry (and one-hot index) as `target`.
  void add_alias(const std::string& alias, std::string_view target);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  const ModalitySpec& spec(std::size_t index) const;
  const ModalitySpec& spec(std::string_view name) const { return spec(index_of(name)); }

  std::size_t size() const { return specs_.size(); }
  // max over entries of d_m + d_pm + |M|
  std::size_t total_width() const;

  const std::vector<ModalitySpec>& specs() const { return specs_; }
  const std::map<std::string, std::size_t>& aliases() const { return aliases_; }

  bool operator==(const ModalityRegistry&) const = default;

 private:
  std::vector<ModalitySpec> specs_;
  std::map<std::string, std::size_t> aliases_;
};

struct SegmentLayout {
  std::size_t raw_end = 0;         // raw is [0, raw_end)
  std::size_t pad_end = 0;         // zero pad is [raw_end, pad_end)
  std::size_t positional_end = 0;  // positional is [pad_end, positional_end)
  std::size_t total = 0;           // modality one-hot is [positional_end, total)

  std::size_t pad_width() const { return pad_end - raw_end; }
  std::size_t positional_width() const { return positional_end - pad_end; }
  std::size_t modality_width() const { return total - positional_end; }
  bool operator==(const SegmentLayout&) const = default;
};

SegmentLayout layout_for(const ModalitySpec& spec, const ModalityRegistry& registry);

struct StandardizedBatch {
  Tensor data;  // [n, t_m, d_all]
  SegmentLayout layout;
  std::size_t modality_index = 0;
  std::string task_name;
  Shape grid;  // extents of the positional axes; product == t_m

  std::size_t batch_size() const { return data.shape()[0]; }
  std::size_t sequence_length() const { return data.shape()[1]; }
};

// [n, H, W] or [n, H, W, C] -> [n, (H/p)(W/p), p*p*C]. Patches are taken in
// row-major grid order; inside a patch, pixels are row-major with channels
// innermost.
Tensor patchify(const Tensor& image, std::size_t patch);

// Fourier positional features for a grid with the given axis extents.
// Per axis the coordinate p is normalized to [-1, 1] (0 for singleton axes)
// and expanded as [p, sin(pi f_k p) ..., cos(pi f_k p) ...] with F
// frequencies linearly spaced over [1, max_freq / 2]. Rows enumerate grid
// positions in row-major order. Result: [prod(lengths), a * (2F + 1)].
Tensor fourier_encoding(std::span<const std::size_t> lengths, std::size_t bands, double max_freq);

// Serializes raw input for `modality` (a registry name or alias).
// Images (specs with patch_size) take [n, H, W] or [n, H, W, C]; everything
// else takes [n, e_1, ..., e_a, d_m] (the trailing channel axis may be
// omitted when d_m == 1).
StandardizedBatch standardize(const Tensor& raw, const ModalityRegistry& registry, std::string_view modality,
                              std::string_view task);

// Overwrites the positional segment of every batch with the first batch's
// table so time-aligned modalities share positions row for row.
std::vector<StandardizedBatch> shared_time_encoding(std::vector<StandardizedBatch> batches);

// Raw segment [n, t_m, d_m] of a standardized batch.
Tensor extract_raw(const StandardizedBatch& batch);

// Copy of `batch` with the modality one-hot segment zeroed.
StandardizedBatch without_modality_identity(const StandardizedBatch& batch);

// Rows [n] of a standardized batch, keeping layout metadata.
StandardizedBatch select_rows(const StandardizedBatch& batch, std::span<const std::size_t> rows);

}  // namespace hmmt
