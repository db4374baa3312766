#include "hmmt/modality.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hmmt/errors.hpp"

namespace hmmt {

void ModalitySpec::validate() const {
  if (name.empty()) throw ConfigError("modality name must be non-empty");
  if (channels == 0 || extra_axes == 0) throw ConfigError("modality '" + name + "': channels and extra_axes must be positive");
  if (freq_bands == 0) throw ConfigError("modality '" + name + "': num_freq_bands must be >= 1");
  if (!(max_freq > 0.0)) throw ConfigError("modality '" + name + "': max_freq must be positive");
  if (patch_size && (*patch_size == 0 || extra_axes != 2)) {
    throw ConfigError("modality '" + name + "': patch_size requires a positive size and 2 extra axes");
  }
}

std::size_t ModalityRegistry::add(ModalitySpec spec) {
  spec.validate();
  if (contains(spec.name)) throw ConfigError("modality '" + spec.name + "' registered twice");
  specs_.push_back(std::move(spec));
  return specs_.size() - 1;
}

void ModalityRegistry::add_alias(const std::string& alias, std::string_view target) {
  if (contains(alias)) throw ConfigError("alias '" + alias + "' collides with an existing modality");
  aliases_.emplace(alias, index_of(target));
}

bool ModalityRegistry::contains(std::string_view name) const {
  if (aliases_.contains(std::string(name))) return true;
  return std::any_of(specs_.begin(), specs_.end(), [&](const ModalitySpec& s) { return s.name == name; });
}

std::size_t ModalityRegistry::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return i;
  }
  if (auto it = aliases_.find(std::string(name)); it != aliases_.end()) return it->second;
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

const ModalitySpec& ModalityRegistry::spec(std::size_t index) const {
  if (index >= specs_.size()) throw ConfigError("modality index " + std::to_string(index) + " out of range");
  return specs_[index];
}

std::size_t ModalityRegistry::total_width() const {
  std::size_t width = 0;
  for (const auto& s : specs_) width = std::max(width, s.channels + s.positional_width() + specs_.size());
  return width;
}

SegmentLayout layout_for(const ModalitySpec& spec, const ModalityRegistry& registry) {
  SegmentLayout l;
  l.total = registry.total_width();
  l.raw_end = spec.channels;
  l.positional_end = l.total - registry.size();
  l.pad_end = l.positional_end - spec.positional_width();
  return l;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  const auto& s = image.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw LayoutError("patchify expects [n,H,W] or [n,H,W,C], got " + shape_to_string(s));
  }
  if (patch == 0) throw LayoutError("patch size must be positive");
  const std::size_t n = s[0], h = s[1], w = s[2], c = s.size() == 4 ? s[3] : 1;
  if (h % patch != 0 || w % patch != 0) {
    throw LayoutError("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                      std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t width = patch * patch * c;
  auto src = image.data();
  std::vector<double> out(n * gh * gw * width);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t pr = 0; pr < gh; ++pr)
      for (std::size_t pc = 0; pc < gw; ++pc)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t row = pr * patch + y, col = pc * patch + x;
              out[o++] = src[((b * h + row) * w + col) * c + ch];
            }
  return Tensor::from({n, gh * gw, width}, std::move(out));
}

Tensor fourier_encoding(std::span<const std::size_t> lengths, std::size_t bands, double max_freq) {
  if (bands < 1) throw ConfigError("fourier_encoding: num_freq_bands must be >= 1");
  if (lengths.empty()) throw ConfigError("fourier_encoding: at least one axis required");
  std::vector<double> freqs(bands);
  for (std::size_t k = 0; k < bands; ++k) {
    freqs[k] = bands == 1 ? 1.0 : 1.0 + (max_freq / 2.0 - 1.0) * static_cast<double>(k) / static_cast<double>(bands - 1);
  }
  const std::size_t per_axis = 2 * bands + 1;
  const std::size_t width = lengths.size() * per_axis;
  std::size_t t = 1;
  for (auto l : lengths) {
    if (l == 0) throw LayoutError("fourier_encoding: zero-length axis");
    t *= l;
  }
  std::vector<double> out(t * width);
  std::vector<std::size_t> idx(lengths.size(), 0);
  for (std::size_t row = 0; row < t; ++row) {
    double* dst = out.data() + row * width;
    for (std::size_t a = 0; a < lengths.size(); ++a) {
      const double p = lengths[a] == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(idx[a]) / static_cast<double>(lengths[a] - 1);
      double* ax = dst + a * per_axis;
      ax[0] = p;
      for (std::size_t k = 0; k < bands; ++k) {
        const double arg = std::numbers::pi * freqs[k] * p;
        ax[1 + k] = std::sin(arg);
        ax[1 + bands + k] = std::cos(arg);
      }
    }
    for (std::size_t a = lengths.size(); a-- > 0;) {
      if (++idx[a] < lengths[a]) break;
      idx[a] = 0;
    }
  }
  return Tensor::from({t, width}, std::move(out));
}

StandardizedBatch standardize(const Tensor& raw, const ModalityRegistry& registry, std::string_view modality,
                              std::string_view task) {
  const std::size_t index = registry.index_of(modality);
  const ModalitySpec& spec = registry.spec(index);
  Tensor seq;
  Shape grid;
  if (spec.patch_size) {
    seq = patchify(raw, *spec.patch_size);
    grid = {raw.shape()[1] / *spec.patch_size, raw.shape()[2] / *spec.patch_size};
  } else {
    const auto& s = raw.shape();
    const bool implicit_channel = spec.channels == 1 && s.size() == spec.extra_axes + 1;
    if (!implicit_channel && (s.size() != spec.extra_axes + 2 || s.back() != spec.channels)) {
      throw LayoutError("modality '" + spec.name + "' expects [n, " + std::to_string(spec.extra_axes) +
                        " axes, " + std::to_string(spec.channels) + "], got " + shape_to_string(s));
    }
    grid.assign(s.begin() + 1, s.begin() + 1 + static_cast<std::ptrdiff_t>(spec.extra_axes));
    seq = Tensor::from({s[0], shape_numel(grid), spec.channels}, raw.to_vector());
  }
  if (seq.shape()[2] != spec.channels) {
    throw LayoutError("modality '" + spec.name + "': patchified width " + std::to_string(seq.shape()[2]) +
                      " does not match channel size " + std::to_string(spec.channels));
  }
  const SegmentLayout layout = layout_for(spec, registry);
  const Tensor pos = fourier_encoding(grid, spec.freq_bands, spec.max_freq);
  const std::size_t n = seq.shape()[0], t = seq.shape()[1], d = layout.total;
  auto src = seq.data();
  auto pd = pos.data();
  const std::size_t pw = layout.positional_width();
  std::vector<double> out(n * t * d, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < t; ++i) {
      double* row = out.data() + (b * t + i) * d;
      std::copy_n(src.begin() + (b * t + i) * spec.channels, spec.channels, row);
      std::copy_n(pd.begin() + i * pw, pw, row + layout.pad_end);
      row[layout.positional_end + index] = 1.0;
    }
  }
  StandardizedBatch batch;
  batch.data = Tensor::from({n, t, d}, std::move(out));
  batch.layout = layout;
  batch.modality_index = index;
  batch.task_name = std::string(task);
  batch.grid = std::move(grid);
  return batch;
}

std::vector<StandardizedBatch> shared_time_encoding(std::vector<StandardizedBatch> batches) {
  if (batches.empty()) return batches;
  const auto& ref = batches.front();
  for (const auto& b : batches) {
    if (b.sequence_length() != ref.sequence_length() || b.batch_size() != ref.batch_size()) {
      throw LayoutError("shared_time_encoding: batches are not time-aligned (" + shape_to_string(b.data.shape()) +
                        " vs " + shape_to_string(ref.data.shape()) + ")");
    }
    if (b.layout.positional_width() != ref.layout.positional_width() || b.layout.total != ref.layout.total) {
      throw LayoutError("shared_time_encoding: positional widths differ between aligned modalities");
    }
  }
  const std::size_t t = ref.sequence_length(), d = ref.layout.total;
  const std::size_t begin = ref.layout.pad_end, width = ref.layout.positional_width();
  // Positional rows are identical across the batch axis, so row 0 of the
  // reference batch holds the table.
  const std::vector<double> table(ref.data.data().begin(), ref.data.data().begin() + static_cast<std::ptrdiff_t>(t * d));
  for (std::size_t k = 1; k < batches.size(); ++k) {
    batches[k].data = batches[k].data.clone();  // handles share storage with the caller
    auto dst = batches[k].data.mutable_data();
    for (std::size_t b = 0; b < batches[k].batch_size(); ++b) {
      for (std::size_t i = 0; i < t; ++i) {
        std::copy_n(table.begin() + i * d + begin, width, dst.begin() + (b * t + i) * d + begin);
      }
    }
  }
  return batches;
}

Tensor extract_raw(const StandardizedBatch& batch) {
  NoGradGuard guard;
  return slice(batch.data, 2, 0, batch.layout.raw_end).detach();
}

StandardizedBatch without_modality_identity(const StandardizedBatch& batch) {
  StandardizedBatch out = batch;
  out.data = batch.data.clone();
  auto d = out.data.mutable_data();
  const std::size_t w = batch.layout.total;
  for (std::size_t r = 0; r < d.size() / w; ++r) {
    std::fill(d.begin() + r * w + batch.layout.positional_end, d.begin() + (r + 1) * w, 0.0);
  }
  return out;
}

StandardizedBatch select_rows(const StandardizedBatch& batch, std::span<const std::size_t> rows) {
  NoGradGuard guard;
  StandardizedBatch out = batch;
  out.data = gather_rows(batch.data, rows);
  return out;
}

}  // namespace hmmt
