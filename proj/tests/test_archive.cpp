#include "onlinehoi/archive.hpp"
#include "onlinehoi/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace onlinehoi;
using namespace onlinehoi::testing;
namespace fs = std::filesystem;

namespace {

archive::Archive sample_archive() {
  Rng rng = make_rng(4);
  archive::Archive a;
  a.meta = {{"config_hash", "abc"}, {"seed", 7}};
  a.put("w", archive::from_matrix(random_mat(rng, 3, 5)));
  a.put("half", archive::from_matrix(random_mat(rng, 2, 2), archive::DType::f32));
  a.put("scalars", {{4}, archive::DType::f64, {1.0, -2.5, 1e-300, 0.0}});
  return a;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("onlinehoi_archive_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Archive, RoundTripIsBitwise) {
  const auto a = sample_archive();
  const std::string bytes = archive::to_bytes(a);
  std::istringstream is(bytes);
  const auto b = archive::read(is);
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_EQ(b.arrays.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(b.arrays[i].first, a.arrays[i].first);
    EXPECT_EQ(b.arrays[i].second.shape, a.arrays[i].second.shape);
    EXPECT_EQ(b.arrays[i].second.data, a.arrays[i].second.data);
  }
  EXPECT_EQ(archive::to_bytes(b), bytes);
}

TEST(Archive, Float32StoresRoundedValues) {
  Mat m(1, 1);
  m << 0.1;
  const auto arr = archive::from_matrix(m, archive::DType::f32);
  EXPECT_EQ(arr.data[0], static_cast<double>(0.1f));
  EXPECT_NE(arr.data[0], 0.1);
}

TEST(Archive, CorruptionIsDetected) {
  std::string bytes = archive::to_bytes(sample_archive());
  for (std::size_t pos : {std::size_t{0}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] ^= 0x40;
    std::istringstream is(bad);
    EXPECT_THROW(archive::read(is), ConfigError) << pos;
  }
  std::istringstream cut(bytes.substr(0, bytes.size() - 9));
  EXPECT_THROW(archive::read(cut), ConfigError);
}

TEST(Archive, ParamImportChecksKeysAndShapes) {
  Rng rng = make_rng(1);
  nn::ParamStore src;
  nn::Linear(src, "lin", 3, 2, rng);
  archive::Archive a;
  archive::export_params(src, a);
  EXPECT_TRUE(a.contains("param/lin.weight"));

  nn::ParamStore same;
  nn::Linear(same, "lin", 3, 2, rng);
  archive::import_params(same, a);
  for (std::size_t i = 0; i < src.items().size(); ++i)
    EXPECT_TRUE((same.items()[i].second.value().array() == src.items()[i].second.value().array()).all());

  nn::ParamStore wider;
  nn::Linear(wider, "lin", 4, 2, rng);
  EXPECT_THROW(archive::import_params(wider, a), ShapeError);
  nn::ParamStore other;
  nn::Linear(other, "other", 3, 2, rng);
  EXPECT_THROW(archive::import_params(other, a), ConfigError);
}

TEST(Archive, AtomicSaveLeavesNoTempFile) {
  const fs::path p = scratch("a.bin");
  archive::save(p, sample_archive());
  EXPECT_FALSE(fs::exists(fs::path(p.string() + ".tmp")));
  EXPECT_EQ(archive::load(p).meta["seed"], 7);
  fs::remove_all(p.parent_path());
}

TEST(Archive, OptimizerResumeReproducesLosses) {
  Rng data_rng = make_rng(9);
  const Mat x = random_mat(data_rng, 16, 3), y = random_mat(data_rng, 16, 2);
  auto run = [&](nn::Adam& opt, const nn::Linear& lin, int steps) {
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
      Var loss = ag::mse(lin(Var(x)), Var(y));
      losses.push_back(loss.item());
      ag::backward(loss);
      opt.step();
    }
    return losses;
  };
  Rng r1 = make_rng(2);
  nn::ParamStore s1;
  nn::Linear l1(s1, "lin", 3, 2, r1);
  nn::Adam o1(s1, {.lr = 0.05});
  const auto full = run(o1, l1, 20);

  Rng r2 = make_rng(2);
  nn::ParamStore s2;
  nn::Linear l2(s2, "lin", 3, 2, r2);
  nn::Adam o2(s2, {.lr = 0.05});
  run(o2, l2, 8);
  archive::Archive ck;
  archive::export_params(s2, ck);
  archive::export_adam(s2, o2, ck);
  std::istringstream is(archive::to_bytes(ck));
  const auto loaded = archive::read(is);

  Rng r3 = make_rng(77);
  nn::ParamStore s3;
  nn::Linear l3(s3, "lin", 3, 2, r3);
  nn::Adam o3(s3, {.lr = 0.05});
  archive::import_params(s3, loaded);
  archive::import_adam(s3, o3, loaded);
  const auto resumed = run(o3, l3, 12);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(resumed[i], full[8 + i]) << i;
}
