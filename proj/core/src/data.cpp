// SPDX-License-Identifier: Apache-2.0
#include "diffseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "diffseg/array_io.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

namespace {

struct Blob {
  double cy, cx, sy, sx, amp;
};

struct Lesion {
  double cy, cx, ry, rx, theta, strength;
};

bool inside_ellipse(const Lesion& l, double y, double x) {
  const double dy = y - l.cy, dx = x - l.cx;
  const double u = (dx * std::cos(l.theta) + dy * std::sin(l.theta)) / l.rx;
  const double v = (-dx * std::sin(l.theta) + dy * std::cos(l.theta)) / l.ry;
  return u * u + v * v <= 1.0;
}

// Per-channel lesion contrast pattern, fixed across the corpus so the
// lesion appearance is a learnable function of the prior. Cycled for c > 4.
constexpr double kLesionContrast[4] = {1.0, -0.7, 0.55, -0.45};

}  // namespace

std::vector<LabeledSlice> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1) throw ConfigError("generate_synthetic: count must be >= 1");
  if (spec.channels < 1) throw ConfigError("generate_synthetic: channels must be >= 1");
  if (spec.height < 8 || spec.width < 8)
    throw ConfigError("generate_synthetic: size must be at least 8x8");
  if (!(spec.empty_fraction >= 0.0 && spec.empty_fraction <= 1.0))
    throw ConfigError("generate_synthetic: empty_fraction must be in [0,1]");

  const auto h = spec.height, w = spec.width;
  std::vector<LabeledSlice> out;
  out.reserve(static_cast<std::size_t>(spec.count));

  for (int i = 0; i < spec.count; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, "slice", static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // shared smooth anatomy field
    constexpr int kBlobs = 6;
    std::vector<Blob> blobs(kBlobs);
    for (auto& b : blobs) {
      b.cy = unit(rng) * static_cast<double>(h);
      b.cx = unit(rng) * static_cast<double>(w);
      b.sy = (0.125 + unit(rng) * (1.0 / 3.0 - 0.125)) * static_cast<double>(h);
      b.sx = (0.125 + unit(rng) * (1.0 / 3.0 - 0.125)) * static_cast<double>(w);
      b.amp = unit(rng) * 2.0 - 1.0;
    }

    std::vector<Lesion> lesions;
    if (spec.forced_lesion) {
      const auto& f = *spec.forced_lesion;
      lesions.push_back({f.cy, f.cx, f.ry, f.rx, f.theta, 0.8});
    } else {
      const bool empty = unit(rng) < spec.empty_fraction;
      const int n_lesions = empty ? 0 : 1 + static_cast<int>(unit(rng) * 3.0) % 3;
      for (int l = 0; l < n_lesions; ++l) {
        Lesion les;
        les.cy = (0.15 + 0.7 * unit(rng)) * static_cast<double>(h);
        les.cx = (0.15 + 0.7 * unit(rng)) * static_cast<double>(w);
        les.ry = 3.0 + unit(rng) * (static_cast<double>(h) / 6.0 - 3.0);
        les.rx = 3.0 + unit(rng) * (static_cast<double>(w) / 6.0 - 3.0);
        les.theta = unit(rng) * M_PI;
        les.strength = 0.6 + 0.4 * unit(rng);
        lesions.push_back(les);
      }
    }

    auto mask = torch::zeros({1, h, w}, torch::kUInt8);
    auto* mp = mask.data_ptr<std::uint8_t>();
    auto anatomy = torch::zeros({h, w}, torch::kFloat64);
    auto* ap = anatomy.data_ptr<double>();
    auto lesion_field = torch::zeros({h, w}, torch::kFloat64);
    auto* lp = lesion_field.data_ptr<double>();

    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double a = 0.0;
        for (const auto& b : blobs) {
          const double dy = (static_cast<double>(y) - b.cy) / b.sy;
          const double dx = (static_cast<double>(x) - b.cx) / b.sx;
          a += b.amp * std::exp(-0.5 * (dy * dy + dx * dx));
        }
        ap[y * w + x] = a;
        double les = 0.0;
        bool in = false;
        for (const auto& l : lesions) {
          if (inside_ellipse(l, static_cast<double>(y), static_cast<double>(x))) {
            in = true;
            les = std::max(les, l.strength);
          }
        }
        if (in) mp[y * w + x] = 1;
        lp[y * w + x] = les;
      }
    }

    auto prior = torch::empty({spec.channels, h, w}, torch::kFloat32);
    std::normal_distribution<double> pixel_noise(0.0, 0.05);
    for (int ch = 0; ch < spec.channels; ++ch) {
      const double gain = 0.6 + 0.8 * unit(rng);
      const double offset = -0.2 + 0.4 * unit(rng);
      const double contrast = kLesionContrast[ch % 4];
      auto raw = torch::empty({h, w}, torch::kFloat64);
      auto* rp = raw.data_ptr<double>();
      for (std::int64_t p = 0; p < h * w; ++p)
        rp[p] = offset + gain * ap[p] + contrast * lp[p] + pixel_noise(rng);
      prior.index_put_({ch}, percentile_clip(raw, 1.0, 99.0).to(torch::kFloat32));
    }

    std::ostringstream id;
    id << "p" << std::setw(4) << std::setfill('0') << (i / spec.slices_per_patient) << "_s"
       << std::setw(3) << std::setfill('0') << (i % spec.slices_per_patient);
    LabeledSlice slice{std::move(prior), std::move(mask), id.str()};
    validate_slice(slice);
    out.push_back(std::move(slice));
  }
  return out;
}

torch::Tensor percentile_clip(const torch::Tensor& x, double low, double high) {
  if (!(low >= 0.0 && low < high && high <= 100.0))
    throw ConfigError("percentile_clip: need 0 <= low < high <= 100");
  auto flat = x.detach().to(torch::kFloat64).contiguous().reshape({-1});
  std::vector<double> vals(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
  const double lo = percentile_linear(vals, low);
  const double hi = percentile_linear(std::move(vals), high);
  if (!(hi > lo)) {
    std::cerr << "[diffseg] percentile_clip: degenerate range (" << lo << ", " << hi
              << "); returning zeros\n";
    return torch::zeros_like(x.to(torch::kFloat64));
  }
  auto clipped = x.to(torch::kFloat64).clamp(lo, hi);
  return (clipped - lo) / (hi - lo) * 2.0 - 1.0;
}

torch::Tensor center_crop_or_pad(const torch::Tensor& x, std::int64_t target_h,
                                 std::int64_t target_w) {
  if (target_h < 1 || target_w < 1) throw ConfigError("center_crop_or_pad: target must be positive");
  if (x.dim() < 2) throw DataError("center_crop_or_pad: need at least 2 dims");
  auto t = x;
  const auto h = t.size(-2), w = t.size(-1);

  // crop: remove floor(margin/2) from the low side, the extra from the high
  if (h > target_h) {
    const auto start = (h - target_h) / 2;
    t = t.narrow(-2, start, target_h);
  }
  if (w > target_w) {
    const auto start = (w - target_w) / 2;
    t = t.narrow(-1, start, target_w);
  }
  // pad: zeros, extra pixel on the high side
  const auto ph = target_h - t.size(-2), pw = target_w - t.size(-1);
  if (ph > 0 || pw > 0) {
    namespace F = torch::nn::functional;
    t = F::pad(t, F::PadFuncOptions({pw / 2, pw - pw / 2, ph / 2, ph - ph / 2}));
  }
  return t;
}

torch::Tensor merge_labels(const torch::Tensor& mask,
                           const std::set<std::int64_t>& foreground_ids) {
  auto ids = mask.to(torch::kInt64);
  auto out = torch::zeros_like(ids, torch::kUInt8);
  for (const auto id : foreground_ids) out |= ids.eq(id).to(torch::kUInt8);
  return out;
}

std::vector<LabeledSlice> preprocess_volume(const torch::Tensor& volume,
                                            const torch::Tensor& labels,
                                            const PreprocessSpec& spec,
                                            const std::set<std::int64_t>& foreground_ids,
                                            const std::string& stem) {
  if (volume.dim() != 4) throw DataError("preprocess_volume: volume must be (c,d,h,w)");
  if (labels.dim() != 3) throw DataError("preprocess_volume: labels must be (d,h,w)");
  if (volume.size(1) != labels.size(0) || volume.size(2) != labels.size(1) ||
      volume.size(3) != labels.size(2))
    throw DataError("preprocess_volume: volume/label dims differ");
  if (!(spec.clip_low >= 0.0 && spec.clip_low < spec.clip_high && spec.clip_high <= 100.0))
    throw ConfigError("preprocess_volume: bad clip percentiles");
  if (spec.crop_h < 1 || spec.crop_w < 1)
    throw ConfigError("preprocess_volume: crop size must be positive");

  const auto depth = volume.size(1);
  std::int64_t lo = 0, hi = depth;
  if (spec.slice_range) {
    lo = spec.slice_range->first;
    hi = depth - spec.slice_range->second;
    if (lo < 0 || hi <= lo)
      throw ConfigError("preprocess_volume: slice_range excludes everything");
  }

  std::vector<LabeledSlice> out;
  for (std::int64_t z = lo; z < hi; ++z) {
    auto label2d = labels.select(0, z);
    auto mask = spec.merge_labels ? merge_labels(label2d, foreground_ids)
                                  : label2d.ne(0).to(torch::kUInt8);
    mask = center_crop_or_pad(mask, spec.crop_h, spec.crop_w).unsqueeze(0).contiguous();

    const auto channels = volume.size(0);
    auto prior = torch::empty({channels, spec.crop_h, spec.crop_w}, torch::kFloat32);
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      auto clipped = percentile_clip(volume.select(0, ch).select(0, z), spec.clip_low,
                                     spec.clip_high);
      prior.index_put_({ch},
                       center_crop_or_pad(clipped, spec.crop_h, spec.crop_w).to(torch::kFloat32));
    }

    std::ostringstream id;
    id << stem << "_s" << std::setw(3) << std::setfill('0') << z;
    LabeledSlice slice{std::move(prior), std::move(mask), id.str()};
    validate_slice(slice);
    out.push_back(std::move(slice));
  }
  if (out.empty()) throw DataError("preprocess_volume: no slices left");
  return out;
}

namespace {
std::string patient_key(const std::string& id) {
  const auto pos = id.find('_');
  return pos == std::string::npos ? id : id.substr(0, pos);
}
}  // namespace

SplitResult split_dataset(const std::vector<LabeledSlice>& slices, double train_fraction,
                          std::uint64_t seed, bool group_by_patient) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("split_dataset: train_fraction must be in (0,1)");
  if (slices.empty()) throw DataError("split_dataset: no slices");

  std::map<std::string, std::uint64_t> key_hash;
  for (const auto& s : slices) {
    const auto key = group_by_patient ? patient_key(s.id) : s.id;
    key_hash.emplace(key, mix64(fnv1a64(key) ^ seed));
  }
  std::vector<std::pair<std::string, std::uint64_t>> keys(key_hash.begin(), key_hash.end());
  if (keys.size() < 2) throw DataError("split_dataset: need at least two groups to split");
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });

  const auto n_keys = static_cast<std::int64_t>(keys.size());
  const auto n_train = std::clamp<std::int64_t>(
      std::llround(train_fraction * static_cast<double>(n_keys)), 1, n_keys - 1);
  std::set<std::string> train_keys;
  for (std::int64_t i = 0; i < n_train; ++i) train_keys.insert(keys[static_cast<std::size_t>(i)].first);

  SplitResult r;
  for (const auto& s : slices) {
    const auto key = group_by_patient ? patient_key(s.id) : s.id;
    if (train_keys.count(key)) {
      r.train.push_back(s);
    } else if (s.mask.sum().item<std::int64_t>() == 0) {
      r.excluded_empty_test.push_back(s);
    } else {
      r.test.push_back(s);
    }
  }
  if (r.train.empty() || r.test.empty())
    throw DataError("split_dataset: a split came out empty");
  return r;
}

void validate_slice(const LabeledSlice& slice) {
  if (slice.prior.dim() != 3 || slice.mask.dim() != 3 || slice.mask.size(0) != 1)
    throw DataError("slice " + slice.id + ": bad tensor ranks");
  if (slice.prior.size(1) != slice.mask.size(1) || slice.prior.size(2) != slice.mask.size(2))
    throw DataError("slice " + slice.id + ": prior/mask spatial dims differ");
  if (!torch::isfinite(slice.prior).all().item<bool>())
    throw DataError("slice " + slice.id + ": non-finite prior");
  const auto mn = slice.prior.min().item<double>(), mx = slice.prior.max().item<double>();
  if (mn < -1.0 - 1e-6 || mx > 1.0 + 1e-6)
    throw DataError("slice " + slice.id + ": prior outside [-1,1]");
  auto m = slice.mask.to(torch::kInt64);
  if (!(m.eq(0) | m.eq(1)).all().item<bool>())
    throw DataError("slice " + slice.id + ": mask not binary");
}

std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const SplitResult& split) {
  const auto slice_dir = dir / "slices";
  std::filesystem::create_directories(slice_dir);
  std::vector<ManifestEntry> entries;

  auto emit = [&](const std::vector<LabeledSlice>& slices, const std::string& tag) {
    for (const auto& s : slices) {
      validate_slice(s);
      const auto prior_rel = "slices/" + s.id + "_prior.arr";
      const auto mask_rel = "slices/" + s.id + "_mask.arr";
      save_array(dir / prior_rel, s.prior);
      save_array(dir / mask_rel, s.mask);
      entries.push_back({s.id, tag, prior_rel, sha256_file(dir / prior_rel)});
      entries.push_back({s.id, tag, mask_rel, sha256_file(dir / mask_rel)});
    }
  };
  emit(split.train, "train");
  emit(split.test, "test");
  emit(split.excluded_empty_test, "excluded");

  std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return a.relative_path < b.relative_path;
  });
  write_manifest(dir / "manifest.tsv", entries);
  return entries;
}

std::vector<LabeledSlice> load_dataset(const std::filesystem::path& dir, const std::string& split) {
  const auto entries = read_manifest(dir / "manifest.tsv");
  std::map<std::string, std::pair<torch::Tensor, torch::Tensor>> by_id;  // prior, mask
  for (const auto& e : entries) {
    if (e.split != split) continue;
    const auto path = dir / e.relative_path;
    if (sha256_file(path) != e.sha256)
      throw DataError("checksum mismatch for " + e.relative_path);
    auto t = load_array(path);
    auto& pair = by_id[e.id];
    if (e.relative_path.find("_prior.arr") != std::string::npos)
      pair.first = std::move(t);
    else
      pair.second = std::move(t);
  }
  std::vector<LabeledSlice> out;
  out.reserve(by_id.size());
  for (auto& [id, pm] : by_id) {
    if (!pm.first.defined() || !pm.second.defined())
      throw DataError("incomplete slice files for id " + id);
    LabeledSlice s{std::move(pm.first), std::move(pm.second), id};
    validate_slice(s);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no slices with split '" + split + "' in " + dir.string());
  return out;
}

}  // namespace diffseg
