#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "srcl/kspace.hpp"
#include "srcl/phantom.hpp"
#include "srcl/pipeline.hpp"
#include "srcl/volume.hpp"

using namespace srcl;
namespace fs = std::filesystem;

namespace {

PhantomSpec phantom16(std::uint64_t seed) {
  PhantomSpec s;
  s.shape = {16, 16, 16};
  s.n_ellipsoids = 4;
  s.seed = seed;
  return s;
}

Dataset in_memory_dataset(Index n_source, Index n_target, std::uint64_t seed) {
  Dataset d;
  d.scale = ScaleFactor(2, 2, 2);
  std::vector<std::string> ids;
  for (Index i = 0; i < n_source + n_target; ++i) ids.push_back("v" + std::to_string(i));
  SplitCounts counts;
  counts.source = n_source;
  counts.target = n_target;
  counts.validation = 0;
  counts.evaluation = 0;
  d.plan = make_splits(ids, counts, seed);
  for (const auto& id : ids) {
    PhantomSpec ps = phantom16(derive_seed(seed, id));
    d.hr.emplace(id, generate_phantom(ps));
  }
  for (const auto& id : d.plan.target) d.lr.emplace(id, kspace_truncate(d.hr.at(id), d.scale));
  return d;
}

}  // namespace

TEST_CASE("phantoms are deterministic, bounded, and constant when empty") {
  const Volume3D a = generate_phantom(phantom16(5));
  const Volume3D b = generate_phantom(phantom16(5));
  CHECK((a.data.array() == b.data.array()).all());
  CHECK(generate_phantom(phantom16(6)).data.array().maxCoeff() !=
        doctest::Approx(a.data.max()).epsilon(1e-12));

  PhantomSpec empty = phantom16(7);
  empty.n_ellipsoids = 0;
  const Volume3D c = generate_phantom(empty);
  CHECK(c.data.min() == c.data.max());

  for (std::uint64_t s = 0; s < 100; ++s) {
    const Volume3D v = generate_phantom(phantom16(s));
    CHECK(v.data.min() >= 0.0);
    CHECK(v.data.max() <= 1.0);
  }

  PhantomSpec bad = phantom16(1);
  bad.shape = {8, 16, 16};
  CHECK_THROWS_AS(generate_phantom(bad), config_error);
}

TEST_CASE("splits are disjoint, seeded, and size-checked") {
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back("p" + std::to_string(i));
  SplitCounts counts;
  counts.source = 4;
  counts.target = 4;
  counts.validation = 2;
  counts.evaluation = 2;

  const SplitPlan plan = make_splits(ids, counts, 99);
  CHECK(plan.source.size() == 4);
  CHECK(plan.target.size() == 4);
  CHECK(plan.validation.size() == 2);
  CHECK(plan.evaluation.size() == 2);

  std::set<std::string> all;
  for (const auto* g : {&plan.source, &plan.target, &plan.validation, &plan.evaluation})
    all.insert(g->begin(), g->end());
  CHECK(all.size() == 12);  // pairwise disjoint cover

  const SplitPlan again = make_splits(ids, counts, 99);
  CHECK(plan.source == again.source);
  CHECK(plan.evaluation == again.evaluation);
  CHECK(make_splits(ids, counts, 100).source != plan.source);

  counts.source = 20;
  CHECK_THROWS_AS(make_splits(ids, counts, 1), config_error);
}

TEST_CASE("fraction subsets are nested prefixes of one shuffle") {
  std::vector<std::string> ids;
  for (int i = 0; i < 24; ++i) ids.push_back("p" + std::to_string(i));
  SplitCounts counts;
  counts.source = 10;
  counts.target = 10;
  counts.validation = 2;
  counts.evaluation = 2;
  const SplitPlan plan = make_splits(ids, counts, 7);

  CHECK(subset_source(plan, 1.0, 3).ids.size() == 10);
  CHECK(subset_source(plan, 0.3, 3).ids.size() == 3);
  CHECK(subset_source(plan, 0.1, 3).ids.size() == 1);

  std::vector<std::vector<std::string>> chain;
  for (double f : {0.1, 0.3, 0.5, 0.7, 1.0}) chain.push_back(subset_source(plan, f, 3).ids);
  for (std::size_t i = 0; i + 1 < chain.size(); ++i)
    for (const auto& id : chain[i])
      CHECK(std::find(chain[i + 1].begin(), chain[i + 1].end(), id) != chain[i + 1].end());

  CHECK_THROWS_AS(subset_source(plan, 0.2, 3), config_error);
  CHECK_NOTHROW(subset_source(plan, 0.2, 3, false));
}

TEST_CASE("volume file round trip and error paths") {
  const fs::path dir = fs::temp_directory_path() / "srcl_vol_test";
  fs::create_directories(dir);
  const Volume3D v = generate_phantom(phantom16(31));
  write_volume(dir / "a.vol", v, "fp123");
  const Volume3D r = read_volume(dir / "a.vol");
  CHECK(r.shape() == v.shape());
  CHECK((r.data.array() - v.data.array()).abs().maxCoeff() < 1e-6);  // float32 storage
  CHECK_THROWS_AS(read_volume(dir / "missing.vol"), config_error);
  fs::remove_all(dir);
}

TEST_CASE("trilinear upsampling preserves constants and shapes") {
  Volume3D c = Volume3D::zeros(4, 4, 4);
  c.data.array().setConstant(0.42);
  const Volume3D up = trilinear_upsample(c, {2, 2, 2});
  CHECK(up.shape() == Shape{8, 8, 8});
  CHECK((up.data.array() - 0.42).abs().maxCoeff() < 1e-12);
  const Volume3D aniso = trilinear_upsample(c, {1, 2, 2});
  CHECK(aniso.shape() == Shape{4, 8, 8});
}

TEST_CASE("batch iterator: seeded reproducibility, provenance, shapes") {
  const Dataset data = in_memory_dataset(4, 4, 11);
  const FractionSubset subset = subset_source(data.plan, 0.5, 11);
  PatchSpec patch;
  patch.lr = {4, 4, 4};

  BatchIterator a(data, subset, patch, 3, 777);
  BatchIterator b(data, subset, patch, 3, 777);
  for (int rep = 0; rep < 4; ++rep) {
    const auto ba = a.next();
    const auto bb = b.next();
    CHECK((ba.ys.array() == bb.ys.array()).all());
    CHECK((ba.xt.array() == bb.xt.array()).all());
    CHECK(ba.source_ids == bb.source_ids);

    CHECK(ba.ys.shape() == Shape{3, 1, 8, 8, 8});
    CHECK(ba.xt.shape() == Shape{3, 1, 4, 4, 4});

    for (const auto& id : ba.source_ids)
      CHECK(std::find(subset.ids.begin(), subset.ids.end(), id) != subset.ids.end());
    for (const auto& id : ba.target_ids)
      CHECK(std::find(data.plan.target.begin(), data.plan.target.end(), id) != data.plan.target.end());
    // unpaired: the two provenance sets never share a participant
    for (const auto& sid : ba.source_ids)
      CHECK(std::find(ba.target_ids.begin(), ba.target_ids.end(), sid) == ba.target_ids.end());
  }

  BatchIterator c(data, subset, patch, 3, 778);
  CHECK_FALSE((a.next().ys.array() == c.next().ys.array()).all());
}

TEST_CASE("target LR volumes are the k-space truncation of their own HR") {
  const Dataset data = in_memory_dataset(3, 3, 13);
  for (const auto& id : data.plan.target) {
    const Volume3D direct = kspace_truncate(data.hr_of(id), data.scale);
    CHECK((data.lr_of(id).data.array() - direct.data.array()).abs().maxCoeff() < 1e-12);
  }
}
