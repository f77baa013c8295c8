#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/kspace.hpp"
#include "srcl/phantom.hpp"
#include "srcl/rng.hpp"
#include "srcl/tensor.hpp"
#include "srcl/volume.hpp"

namespace srcl {

struct SplitCounts {
  Index source = 12, target = 12, validation = 3, evaluation = 3;

  Index total() const { return source + target + validation + evaluation; }
};

/// Participant assignment; the four groups are pairwise disjoint.
struct SplitPlan {
  std::vector<std::string> source, target, validation, evaluation;

  json to_json() const {
    return json{{"source", source}, {"target", target}, {"validation", validation}, {"evaluation", evaluation}};
  }
  static SplitPlan from_json(const json& j) {
    SplitPlan p;
    p.source = j.at("source").get<std::vector<std::string>>();
    p.target = j.at("target").get<std::vector<std::string>>();
    p.validation = j.at("validation").get<std::vector<std::string>>();
    p.evaluation = j.at("evaluation").get<std::vector<std::string>>();
    return p;
  }
};

/// Deterministic disjoint split: one seeded shuffle, then consecutive takes.
inline SplitPlan make_splits(std::vector<std::string> ids, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.source < 1 || counts.target < 1 || counts.validation < 0 || counts.evaluation < 0)
    throw config_error("split counts must be positive for source/target");
  if (counts.total() > static_cast<Index>(ids.size()))
    throw config_error("not enough participant ids: need " + std::to_string(counts.total()) + ", have " +
                       std::to_string(ids.size()));
  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(ids);
  SplitPlan plan;
  auto take = [&ids](Index n, std::size_t& pos) {
    std::vector<std::string> out(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                                 ids.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(n)));
    pos += static_cast<std::size_t>(n);
    return out;
  };
  std::size_t pos = 0;
  plan.source = take(counts.source, pos);
  plan.target = take(counts.target, pos);
  plan.validation = take(counts.validation, pos);
  plan.evaluation = take(counts.evaluation, pos);
  return plan;
}

struct FractionSubset {
  double fraction = 1.0;
  std::vector<std::string> ids;
};

inline constexpr double kFractionGrid[5] = {1.0, 0.7, 0.5, 0.3, 0.1};

/// Seeded prefix of a single shuffle of the source group, so smaller
/// fractions are nested inside larger ones.
inline FractionSubset subset_source(const SplitPlan& plan, double fraction, std::uint64_t seed,
                                    bool strict = true) {
  if (strict) {
    bool ok = false;
    for (double f : kFractionGrid) ok = ok || std::abs(f - fraction) < 1e-9;
    if (!ok) throw config_error("fraction " + std::to_string(fraction) + " not in the supported grid");
  } else if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw config_error("fraction must be in (0, 1]");
  }
  std::vector<std::string> order = plan.source;
  Rng rng(derive_seed(seed, "source-fraction"));
  rng.shuffle(order);
  const auto n = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(order.size())));
  if (n == 0) throw config_error("fraction selects zero source volumes");
  FractionSubset out;
  out.fraction = fraction;
  out.ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

struct PatchSpec {
  std::array<Index, 3> lr{8, 8, 8};
};

/// In-memory dataset: HR volumes for everyone, materialized LR volumes for
/// the groups that are consumed on the LR grid.
struct Dataset {
  std::filesystem::path dir;
  SplitPlan plan;
  ScaleFactor scale;
  std::map<std::string, Volume3D> hr;
  std::map<std::string, Volume3D> lr;

  const Volume3D& hr_of(const std::string& id) const {
    auto it = hr.find(id);
    if (it == hr.end()) throw config_error("missing HR volume: " + id);
    return it->second;
  }
  const Volume3D& lr_of(const std::string& id) const {
    auto it = lr.find(id);
    if (it == lr.end()) throw config_error("missing LR volume: " + id);
    return it->second;
  }

  static Dataset load(const std::filesystem::path& dir) {
    Dataset d;
    d.dir = dir;
    std::ifstream sf(dir / "splits.json");
    if (!sf) throw config_error("missing splits.json in " + dir.string());
    json sj = json::parse(sf);
    d.plan = SplitPlan::from_json(sj.at("plan"));
    auto sc = sj.at("scale").get<std::vector<Index>>();
    d.scale = ScaleFactor(sc.at(0), sc.at(1), sc.at(2));

    auto load_group = [&](const std::vector<std::string>& ids, bool with_lr) {
      for (const auto& id : ids) {
        d.hr.emplace(id, read_volume(dir / "hr" / (id + ".vol")));
        if (with_lr) d.lr.emplace(id, read_volume(dir / "lr" / (id + ".vol")));
      }
    };
    load_group(d.plan.source, false);
    load_group(d.plan.target, true);
    load_group(d.plan.validation, true);
    load_group(d.plan.evaluation, true);
    return d;
  }
};

/// Stream of unpaired (Y_s, X_t) patch batches. The sampling sequence is a
/// pure function of the seed; provenance of the last batch is kept for the
/// unpaired-contract checks.
class BatchIterator {
 public:
  struct Batch {
    Tensor ys, xt;  // [B, 1, ...]
    std::vector<std::string> source_ids, target_ids;
  };

  BatchIterator(const Dataset& data, const FractionSubset& subset, const PatchSpec& patch,
                Index batch, std::uint64_t seed)
      : data_(&data),
        source_ids_(subset.ids),
        patch_(patch),
        batch_(batch),
        rng_(derive_seed(seed, "batches")) {
    if (source_ids_.empty()) throw config_error("batch iterator needs at least one source volume");
    if (data.plan.target.empty()) throw config_error("batch iterator needs at least one target volume");
    for (int a = 0; a < 3; ++a)
      hr_patch_[a] = patch_.lr[static_cast<std::size_t>(a)] * data.scale[static_cast<std::size_t>(a)];
    // all volumes must accommodate the patch
    for (const auto& id : source_ids_) check_fits(data.hr_of(id).shape(), hr_patch_, id);
    for (const auto& id : data.plan.target) check_fits(data.lr_of(id).shape(), patch_.lr, id);
  }

  Batch next() {
    Batch b;
    b.ys = Tensor({batch_, 1, hr_patch_[0], hr_patch_[1], hr_patch_[2]});
    b.xt = Tensor({batch_, 1, patch_.lr[0], patch_.lr[1], patch_.lr[2]});
    for (Index n = 0; n < batch_; ++n) {
      const auto& sid = source_ids_[static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<std::int64_t>(source_ids_.size()) - 1))];
      copy_patch(data_->hr_of(sid), hr_patch_, b.ys, n);
      b.source_ids.push_back(sid);

      const auto& tid = data_->plan.target[static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<std::int64_t>(data_->plan.target.size()) - 1))];
      copy_patch(data_->lr_of(tid), patch_.lr, b.xt, n);
      b.target_ids.push_back(tid);
    }
    return b;
  }

  std::string rng_state() const { return rng_.state(); }
  void restore_rng(const std::string& s) { rng_.restore(s); }

 private:
  static void check_fits(const Shape& shape, const std::array<Index, 3>& patch, const std::string& id) {
    for (int a = 0; a < 3; ++a)
      if (shape[a] < patch[static_cast<std::size_t>(a)])
        throw config_error("patch does not fit volume " + id + " along axis " + std::to_string(a));
  }

  void copy_patch(const Volume3D& v, const std::array<Index, 3>& patch, Tensor& dst, Index n) {
    std::array<Index, 3> origin{};
    for (int a = 0; a < 3; ++a)
      origin[a] = rng_.uniform_int(0, v.shape()[a] - patch[static_cast<std::size_t>(a)]);
    for (Index z = 0; z < patch[0]; ++z)
      for (Index y = 0; y < patch[1]; ++y)
        for (Index x = 0; x < patch[2]; ++x)
          dst.at(n, Index(0), z, y, x) = v.data.at(origin[0] + z, origin[1] + y, origin[2] + x);
  }

  const Dataset* data_;
  std::vector<std::string> source_ids_;
  PatchSpec patch_;
  std::array<Index, 3> hr_patch_{};
  Index batch_;
  Rng rng_;
};

}  // namespace srcl
