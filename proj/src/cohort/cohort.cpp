#include "strv/cohort/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "strv/errors.hpp"
#include "strv/numkit/binary_io.hpp"

namespace strv::cohort {

namespace fs = std::filesystem;
using nlohmann::json;
using numkit::Rng;

namespace {

constexpr char kVolumeMagic[7] = {'S', 'T', 'R', 'V', 'V', 'O', 'L'};
constexpr char kMaskMagic[7] = {'S', 'T', 'R', 'V', 'M', 'S', 'K'};

// One pass of a width-3 box filter along each axis, edges clamped.
void box_smooth(std::vector<double>& v, const Dims& d) {
  std::vector<double> tmp(v.size());
  const long ext[3] = {d.d, d.h, d.w};
  for (int axis = 0; axis < 3; ++axis) {
    for (long z = 0; z < ext[0]; ++z)
      for (long y = 0; y < ext[1]; ++y)
        for (long x = 0; x < ext[2]; ++x) {
          long c[3] = {z, y, x};
          double s = 0.0;
          for (int o = -1; o <= 1; ++o) {
            long n[3] = {c[0], c[1], c[2]};
            n[axis] = std::clamp(c[axis] + o, 0L, ext[axis] - 1);
            s += v[d.index(n[0], n[1], n[2])];
          }
          tmp[d.index(z, y, x)] = s / 3.0;
        }
    v.swap(tmp);
  }
}

const Mask& find_roi(const RoiMaskSet& rois, const std::string& name) {
  for (std::size_t r = 0; r < rois.size(); ++r) {
    if (rois.names[r] == name) return rois.masks[r];
  }
  throw ConfigError("plant references unknown ROI '" + name + "'");
}

std::string subject_name(std::size_t i) {
  std::ostringstream s;
  s << 's' << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

template <std::size_t N>
void write_header(numkit::BinaryWriter& w, const char (&magic)[N], const Dims& dims) {
  w.put_bytes(std::string_view(magic, N));
  w.put<std::uint32_t>(kVolumeVersion);
  w.put<std::uint32_t>(dims.d);
  w.put<std::uint32_t>(dims.h);
  w.put<std::uint32_t>(dims.w);
}

template <std::size_t N>
Dims read_header(numkit::BinaryReader& r, const char (&magic)[N]) {
  if (r.get_bytes(N) != std::string_view(magic, N)) {
    throw FormatError("bad magic in " + r.path());
  }
  const auto version = r.get<std::uint32_t>();
  if (version > kVolumeVersion) {
    throw UnsupportedVersionError("file version " + std::to_string(version) + " is newer than supported " +
                                  std::to_string(kVolumeVersion) + ": " + r.path());
  }
  if (version == 0) throw FormatError("version 0 is invalid: " + r.path());
  Dims d;
  d.d = r.get<std::uint32_t>();
  d.h = r.get<std::uint32_t>();
  d.w = r.get<std::uint32_t>();
  if (d.count() == 0 || d.count() > (std::size_t{1} << 31)) throw FormatError("invalid dims in " + r.path());
  return d;
}

json descriptors_to_json(const radiomics::DescriptorTable& t) {
  return json::parse(radiomics::descriptor_table_json(t));
}

std::vector<std::size_t> allocate(std::size_t n, const std::vector<std::size_t>& counts,
                                  const std::vector<std::size_t>& caps) {
  // Largest-remainder apportionment of n proportional to counts, at least one
  // per class and never above caps.
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const std::size_t k = counts.size();
  std::vector<std::size_t> out(k, 1);
  for (std::size_t c = 0; c < k; ++c) {
    if (caps[c] < 1) throw ContractViolation("class has too few training subjects for a support/query draw");
  }
  if (n < k) throw ContractViolation("support/query sizes must cover every class");
  std::vector<double> remainder(k);
  std::size_t assigned = k;
  for (std::size_t c = 0; c < k; ++c) {
    const double quota = static_cast<double>(n) * counts[c] / total;
    const auto base = static_cast<std::size_t>(std::floor(quota));
    out[c] = std::clamp<std::size_t>(base, 1, caps[c]);
    assigned += out[c] - 1;
    remainder[c] = quota - std::floor(quota);
  }
  while (assigned > n) {
    // Over-assigned through the minimum-one rule: trim the largest classes.
    std::size_t best = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (out[c] > 1 && (best == k || out[c] > out[best])) best = c;
    }
    if (best == k) throw ContractViolation("support/query sizes cannot satisfy per-class minimum");
    --out[best];
    --assigned;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  while (assigned < n) {
    bool progressed = false;
    for (auto c : order) {
      if (assigned == n) break;
      if (out[c] < caps[c]) {
        ++out[c];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) throw ContractViolation("not enough training subjects for the support/query draw");
  }
  return out;
}

}  // namespace

std::string effect_name(Effect e) {
  switch (e) {
    case Effect::IntensityShift: return "IntensityShift";
    case Effect::NoiseBoost: return "NoiseBoost";
    case Effect::CheckerTexture: return "CheckerTexture";
  }
  throw ContractViolation("unknown effect");
}

Effect parse_effect(const std::string& name) {
  for (Effect e : {Effect::IntensityShift, Effect::NoiseBoost, Effect::CheckerTexture}) {
    if (effect_name(e) == name) return e;
  }
  throw ConfigError("unknown plant effect: " + name);
}

PlantSpec default_plant_spec(int num_classes) {
  PlantSpec spec;
  static const char* cells[] = {"grid_010", "grid_101", "grid_001", "grid_110", "grid_011", "grid_100"};
  for (int c = 1; c < num_classes; ++c) {
    if (c == 1) {
      spec.push_back({c, "core", Effect::IntensityShift, 1.0});
    } else {
      spec.push_back({c, cells[(c - 2) % 6], Effect::CheckerTexture, 1.0});
    }
  }
  return spec;
}

std::vector<int> Cohort::labels() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.label);
  return out;
}

std::vector<std::size_t> Cohort::indices(Split s) const {
  if (manifest.splits.size() != subjects.size()) throw ContractViolation("cohort has no split assignment");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (manifest.splits[i] == s) out.push_back(i);
  }
  return out;
}

RoiMaskSet cohort_rois(const Dims& dims) {
  RoiMaskSet rois;
  rois.add("core", radiomics::ellipsoid_roi(dims, 0.3, 0.3, 0.3));
  auto grid = radiomics::grid_rois(dims);
  for (std::size_t r = 0; r < grid.size(); ++r) rois.add(grid.names[r], std::move(grid.masks[r]));
  return rois;
}

Cohort generate_cohort(const GenerateOptions& opt) {
  if (opt.num_classes < 2) throw ConfigError("need at least two classes");
  if (opt.n_subjects < static_cast<std::size_t>(opt.num_classes)) {
    throw ConfigError("need at least one subject per class");
  }
  if (opt.dims.d < 8 || opt.dims.h < 8 || opt.dims.w < 8) throw ConfigError("each dimension must be at least 8");
  if (!(opt.magnitude_jitter >= 0.0 && opt.magnitude_jitter <= 1.0)) {
    throw ConfigError("magnitude jitter must lie in [0, 1]");
  }
  const PlantSpec plants = opt.plants ? *opt.plants : default_plant_spec(opt.num_classes);
  const RoiMaskSet rois = cohort_rois(opt.dims);
  for (const auto& p : plants) {
    find_roi(rois, p.roi);
    if (!std::isfinite(p.magnitude)) throw ConfigError("plant magnitude must be finite");
    if (p.label < 0 || p.label >= opt.num_classes) throw ConfigError("plant label out of range");
  }

  Cohort cohort;
  auto& m = cohort.manifest;
  m.num_classes = opt.num_classes;
  m.dims = opt.dims;
  m.seed = opt.seed;
  m.plants = plants;
  m.roi_names = rois.names;
  m.descriptors = radiomics::make_descriptor_table(rois.names);
  m.informative = informative_indices(plants, m.descriptors);

  const Dims& d = opt.dims;
  for (std::size_t i = 0; i < opt.n_subjects; ++i) {
    Rng rng(numkit::derive_seed(opt.seed, {0x636f686fULL, i}));
    SubjectRecord rec;
    rec.subject_id = subject_name(i);
    rec.label = static_cast<int>(i % static_cast<std::size_t>(opt.num_classes));
    rec.masks = rois;

    std::vector<double> v(d.count());
    for (double& x : v) x = numkit::standard_normal(rng);
    for (int p = 0; p < opt.smoothing_passes; ++p) box_smooth(v, d);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / v.size());
    for (double& x : v) x = (x - mean) / (sd > 0 ? sd : 1.0);

    for (const auto& p : plants) {
      if (p.label != rec.label) continue;
      const double strength = p.magnitude * (1.0 + opt.magnitude_jitter * (2.0 * numkit::uniform01(rng) - 1.0));
      const Mask& mask = find_roi(rois, p.roi);
      for (std::size_t z = 0; z < d.d; ++z)
        for (std::size_t y = 0; y < d.h; ++y)
          for (std::size_t x = 0; x < d.w; ++x) {
            const auto idx = d.index(z, y, x);
            if (!mask.test(idx)) continue;
            switch (p.effect) {
              case Effect::IntensityShift: v[idx] += strength; break;
              case Effect::NoiseBoost: v[idx] += strength * numkit::standard_normal(rng); break;
              case Effect::CheckerTexture: v[idx] += (z + y + x) % 2 ? strength : -strength; break;
            }
          }
    }
    rec.volume = Volume::zeros(d);
    for (std::size_t k = 0; k < v.size(); ++k) rec.volume.voxels[k] = static_cast<float>(v[k]);
    cohort.subjects.push_back(std::move(rec));
  }
  return cohort;
}

std::vector<std::size_t> informative_indices(const PlantSpec& plants, const radiomics::DescriptorTable& table) {
  std::set<std::size_t> out;
  for (const auto& p : plants) {
    if (p.magnitude == 0.0) continue;
    for (const auto& desc : table) {
      if (desc.roi_name != p.roi) continue;
      const bool first = desc.family == radiomics::Family::FirstOrder;
      if ((p.effect == Effect::IntensityShift && first) || (p.effect == Effect::CheckerTexture && !first) ||
          p.effect == Effect::NoiseBoost) {
        out.insert(desc.index);
      }
    }
  }
  return {out.begin(), out.end()};
}

void extract_features(Cohort& cohort, const radiomics::ExtractionConfig& config) {
  if (cohort.subjects.empty()) throw ContractViolation("cohort is empty");
  for (auto& s : cohort.subjects) {
    if (s.masks.names != cohort.manifest.roi_names) {
      throw ContractViolation("subject " + s.subject_id + " has a different ROI set");
    }
    s.features = radiomics::extract_subject(s.volume, s.masks, config);
  }
  cohort.manifest.descriptors = radiomics::make_descriptor_table(cohort.manifest.roi_names);
}

void split(Cohort& cohort, double train_fraction, double validation_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || validation_fraction < 0 || std::abs(train_fraction + validation_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  const int C = cohort.manifest.num_classes;
  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const int y = cohort.subjects[i].label;
    if (y < 0 || y >= C) throw ContractViolation("subject label out of range");
    members[y].push_back(i);
  }
  Rng rng(numkit::derive_seed(seed, {0x73706c74ULL}));
  std::vector<Split> splits(cohort.size(), Split::Train);
  for (int c = 0; c < C; ++c) {
    auto& ids = members[c];
    if (ids.size() < 2) {
      throw StratificationError("class " + std::to_string(c) + " has fewer than two subjects");
    }
    numkit::shuffle(ids, rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * ids.size()));
    if (train_fraction > 0 && validation_fraction > 0) n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
    for (std::size_t j = n_train; j < ids.size(); ++j) splits[ids[j]] = Split::Validation;
  }
  cohort.manifest.splits = std::move(splits);
}

void compute_norm_stats(Cohort& cohort) {
  const auto train = cohort.indices(Split::Train);
  if (train.empty()) throw ContractViolation("training split is empty");
  const std::size_t F = cohort.manifest.pool_size();
  NormStats st;
  st.mean.assign(F, 0.0);
  st.std.assign(F, 0.0);
  for (auto i : train) {
    const auto& f = cohort.subjects[i].features;
    if (!f || f->values.size() != F) {
      throw ContractViolation("subject " + cohort.subjects[i].subject_id + " has no extracted features");
    }
    for (std::size_t j = 0; j < F; ++j) st.mean[j] += f->values[j];
  }
  const double n = static_cast<double>(train.size());
  for (auto& m : st.mean) m /= n;
  for (auto i : train) {
    const auto& f = *cohort.subjects[i].features;
    for (std::size_t j = 0; j < F; ++j) st.std[j] += (f.values[j] - st.mean[j]) * (f.values[j] - st.mean[j]);
  }
  for (auto& s : st.std) s = std::sqrt(s / n);
  cohort.manifest.norm = std::move(st);
}

std::vector<double> normalize(const radiomics::FeatureVector& raw, const NormStats& stats) {
  if (raw.values.size() != stats.mean.size() || stats.std.size() != stats.mean.size()) {
    throw ContractViolation("feature vector does not match normalization statistics");
  }
  std::vector<double> z(raw.values.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = stats.std[j] < 1e-12 ? 0.0 : std::clamp((raw.values[j] - stats.mean[j]) / stats.std[j], -8.0, 8.0);
  }
  return z;
}

numkit::Tensor normalized_matrix(const Cohort& cohort) {
  const auto& st = cohort.manifest.norm;
  if (st.empty()) throw ContractViolation("normalization statistics missing");
  auto t = numkit::Tensor::matrix(cohort.size(), st.mean.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& f = cohort.subjects[i].features;
    if (!f) throw ContractViolation("subject " + cohort.subjects[i].subject_id + " has no extracted features");
    const auto z = normalize(*f, st);
    std::copy(z.begin(), z.end(), t.row_span(i).begin());
  }
  return t;
}

Dataset make_dataset(const Cohort& cohort) {
  if (cohort.manifest.splits.size() != cohort.size()) throw ContractViolation("cohort has not been split");
  Dataset ds;
  ds.z = normalized_matrix(cohort);
  ds.labels = cohort.labels();
  ds.num_classes = cohort.manifest.num_classes;
  ds.descriptors = cohort.manifest.descriptors;
  for (const auto& s : cohort.subjects) ds.ids.push_back(s.subject_id);
  ds.train = cohort.indices(Split::Train);
  ds.validation = cohort.indices(Split::Validation);
  ds.informative = cohort.manifest.informative;
  return ds;
}

SupportQuery draw_support_query(const std::vector<std::size_t>& pool, const std::vector<int>& labels,
                                int num_classes, std::size_t n_sup, std::size_t n_qry, Rng& rng) {
  if (n_sup + n_qry > pool.size()) throw ContractViolation("support + query exceeds the training pool");
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (auto i : pool) {
    if (i >= labels.size() || labels[i] < 0 || labels[i] >= num_classes) {
      throw ContractViolation("pool index or label out of range");
    }
    members[labels[i]].push_back(i);
  }
  std::vector<std::size_t> counts(num_classes), sup_caps(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    counts[c] = members[c].size();
    sup_caps[c] = counts[c] == 0 ? 0 : counts[c] - 1;
  }
  const auto sup = allocate(n_sup, counts, sup_caps);
  std::vector<std::size_t> qry_caps(num_classes);
  for (int c = 0; c < num_classes; ++c) qry_caps[c] = counts[c] - sup[c];
  const auto qry = allocate(n_qry, counts, qry_caps);

  SupportQuery out;
  for (int c = 0; c < num_classes; ++c) {
    auto ids = members[c];
    numkit::shuffle(ids, rng);
    out.support.insert(out.support.end(), ids.begin(), ids.begin() + sup[c]);
    out.query.insert(out.query.end(), ids.begin() + sup[c], ids.begin() + sup[c] + qry[c]);
  }
  std::sort(out.support.begin(), out.support.end());
  std::sort(out.query.begin(), out.query.end());
  return out;
}

CloneSpec default_clone_spec(std::size_t pool_size) {
  if (pool_size < 101) throw ContractViolation("clone construction needs at least 101 features");
  CloneSpec spec;
  spec.strong = 0;
  for (std::size_t j = 1; j <= 10; ++j) spec.clones.push_back(j);
  spec.weak = 100;
  return spec;
}

void apply_clone_transform(Cohort& cohort, const CloneSpec& spec, std::uint64_t seed) {
  const std::size_t F = cohort.manifest.pool_size();
  if (F == 0) throw ContractViolation("descriptor table missing");
  std::set<std::size_t> used = {spec.strong, spec.weak};
  for (auto c : spec.clones) used.insert(c);
  if (used.size() != spec.clones.size() + 2 || *used.rbegin() >= F) {
    throw ContractViolation("clone spec indices must be distinct and inside the pool");
  }
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto& s = cohort.subjects[i];
    Rng rng(numkit::derive_seed(seed, {0x636c6f6eULL, i}));
    std::vector<double> v(F);
    for (double& x : v) x = numkit::standard_normal(rng);
    const double strong = spec.strong_gap * (s.label == 0 ? 1.0 : 0.0) + v[spec.strong];
    v[spec.strong] = strong;
    for (auto c : spec.clones) v[c] = strong + spec.clone_noise * numkit::standard_normal(rng);
    v[spec.weak] += spec.weak_gap * ((s.label == 1 ? 1.0 : 0.0) - (s.label == 2 ? 1.0 : 0.0));
    s.features = radiomics::FeatureVector{std::move(v)};
  }
  cohort.manifest.informative.assign(used.begin(), used.end());
  cohort.manifest.norm = {};
  if (cohort.manifest.splits.size() == cohort.size()) compute_norm_stats(cohort);
}

void write_volume(const std::string& path, const Volume& volume) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  numkit::BinaryWriter w(out);
  write_header(w, kVolumeMagic, volume.dims);
  w.put_span(std::span<const float>(volume.voxels));
  out.flush();
  w.check(path);
}

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume: " + path);
  numkit::BinaryReader r(in, path);
  Volume v;
  v.dims = read_header(r, kVolumeMagic);
  v.voxels.resize(v.dims.count());
  r.get_span(std::span<float>(v.voxels));
  if (!r.at_end()) throw FormatError("trailing bytes in volume: " + path);
  return v;
}

void write_mask(const std::string& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  numkit::BinaryWriter w(out);
  write_header(w, kMaskMagic, mask.dims);
  w.put_span(std::span<const std::uint8_t>(mask.bits));
  out.flush();
  w.check(path);
}

Mask read_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask: " + path);
  numkit::BinaryReader r(in, path);
  Mask m;
  m.dims = read_header(r, kMaskMagic);
  m.bits.resize(m.dims.count());
  r.get_span(std::span<std::uint8_t>(m.bits));
  if (!r.at_end()) throw FormatError("trailing bytes in mask: " + path);
  m.validate();
  return m;
}

void save_cohort(const Cohort& cohort, const std::string& dir) {
  const auto& m = cohort.manifest;
  fs::create_directories(fs::path(dir) / "volumes");
  json j;
  j["format"] = "strv-cohort";
  j["version"] = kManifestVersion;
  j["num_classes"] = m.num_classes;
  j["dims"] = {m.dims.d, m.dims.h, m.dims.w};
  j["seed"] = m.seed;
  j["roi_names"] = m.roi_names;
  j["informative"] = m.informative;
  auto plants = json::array();
  for (const auto& p : m.plants) {
    plants.push_back({{"label", p.label}, {"roi", p.roi}, {"effect", effect_name(p.effect)}, {"magnitude", p.magnitude}});
  }
  j["plants"] = plants;
  j["descriptors"] = descriptors_to_json(m.descriptors);
  j["norm"] = m.norm.empty() ? json(nullptr) : json{{"mean", m.norm.mean}, {"std", m.norm.std}};
  auto subjects = json::array();
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort.subjects[i];
    json e;
    e["id"] = s.subject_id;
    e["label"] = s.label;
    e["split"] = m.splits.size() == cohort.size()
                     ? json(m.splits[i] == Split::Train ? "train" : "validation")
                     : json(nullptr);
    const std::string vol = "volumes/" + s.subject_id + ".vol";
    write_volume((fs::path(dir) / vol).string(), s.volume);
    e["volume"] = vol;
    auto masks = json::array();
    fs::create_directories(fs::path(dir) / "masks" / s.subject_id);
    for (std::size_t r = 0; r < s.masks.size(); ++r) {
      const std::string mp = "masks/" + s.subject_id + "/" + s.masks.names[r] + ".msk";
      write_mask((fs::path(dir) / mp).string(), s.masks.masks[r]);
      masks.push_back({{"roi", s.masks.names[r]}, {"path", mp}});
    }
    e["masks"] = masks;
    e["features"] = s.features ? json(s.features->values) : json(nullptr);
    subjects.push_back(std::move(e));
  }
  j["subjects"] = subjects;
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Cohort load_cohort(const std::string& dir) {
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  Cohort cohort;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "strv-cohort") throw FormatError("not a cohort manifest: " + path);
    const auto version = j.at("version").get<std::uint32_t>();
    if (version > kManifestVersion) {
      throw UnsupportedVersionError("manifest version " + std::to_string(version) + " is newer than supported");
    }
    auto& m = cohort.manifest;
    m.num_classes = j.at("num_classes").get<int>();
    const auto dims = j.at("dims").get<std::vector<std::uint32_t>>();
    if (dims.size() != 3) throw FormatError("manifest dims must have three entries");
    m.dims = {dims[0], dims[1], dims[2]};
    m.seed = j.at("seed").get<std::uint64_t>();
    m.roi_names = j.at("roi_names").get<std::vector<std::string>>();
    m.informative = j.at("informative").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("plants")) {
      m.plants.push_back({p.at("label").get<int>(), p.at("roi").get<std::string>(),
                          parse_effect(p.at("effect").get<std::string>()), p.at("magnitude").get<double>()});
    }
    m.descriptors = radiomics::parse_descriptor_table_json(j.at("descriptors").dump());
    if (!j.at("norm").is_null()) {
      m.norm.mean = j["norm"].at("mean").get<std::vector<double>>();
      m.norm.std = j["norm"].at("std").get<std::vector<double>>();
    }
    bool any_split = false, all_split = true;
    std::vector<Split> splits;
    for (const auto& e : j.at("subjects")) {
      SubjectRecord s;
      s.subject_id = e.at("id").get<std::string>();
      s.label = e.at("label").get<int>();
      if (s.label < 0 || s.label >= m.num_classes) throw FormatError("subject label out of range: " + s.subject_id);
      s.volume = read_volume((fs::path(dir) / e.at("volume").get<std::string>()).string());
      for (const auto& mk : e.at("masks")) {
        s.masks.add(mk.at("roi").get<std::string>(),
                    read_mask((fs::path(dir) / mk.at("path").get<std::string>()).string()));
      }
      if (!e.at("features").is_null()) s.features = radiomics::FeatureVector{e["features"].get<std::vector<double>>()};
      if (e.at("split").is_null()) {
        all_split = false;
      } else {
        any_split = true;
        const auto sp = e["split"].get<std::string>();
        if (sp != "train" && sp != "validation") throw FormatError("unknown split '" + sp + "'");
        splits.push_back(sp == "train" ? Split::Train : Split::Validation);
      }
      cohort.subjects.push_back(std::move(s));
    }
    if (any_split && !all_split) throw FormatError("split assignment is partial");
    if (all_split && any_split) m.splits = std::move(splits);
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path + ": " + e.what());
  }
  return cohort;
}

}  // namespace strv::cohort
