#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "pycat/checkpoint.hpp"
#include "pycat/model.hpp"
#include "test_util.hpp"

using namespace pycat;
using pycat::testing::random_tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pycat_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::map<std::string, Tensor> t;
  t.emplace("a.weight", random_tensor({3, 4, 2}, rng));
  t.emplace("b", random_tensor({1}, rng));
  t.emplace("scalar", Tensor({}, {std::nextafter(1.0, 2.0)}));
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, t);
  const auto back = read_checkpoint(path);
  ASSERT_EQ(back.size(), t.size());
  for (const auto& [name, x] : t) {
    const Tensor& y = back.at(name);
    ASSERT_EQ(y.shape(), x.shape());
    EXPECT_EQ(std::memcmp(x.values().data(), y.values().data(), x.numel() * sizeof(double)), 0) << name;
  }
}

TEST(Checkpoint, LayoutMatchesFormat) {
  std::map<std::string, Tensor> t;
  t.emplace("w", Tensor({2}, {1.0, -2.0}));
  const auto path = temp_path("layout.ckpt");
  save_checkpoint(path, t);
  const std::string b = read_bytes(path);
  ASSERT_EQ(b.size(), 8u + 4 + 4 + 2 + 1 + 1 + 1 + 4 + 16);
  EXPECT_EQ(b.substr(0, 8), "PYCATCK1");
  uint32_t version, count, dim;
  uint16_t len;
  std::memcpy(&version, b.data() + 8, 4);
  std::memcpy(&count, b.data() + 12, 4);
  std::memcpy(&len, b.data() + 16, 2);
  std::memcpy(&dim, b.data() + 21, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  EXPECT_EQ(count, 1u);
  EXPECT_EQ(len, 1u);
  EXPECT_EQ(b[18], 'w');
  EXPECT_EQ(b[19], 1);  // f64
  EXPECT_EQ(b[20], 1);  // rank
  EXPECT_EQ(dim, 2u);
  double v;
  std::memcpy(&v, b.data() + 33, 8);
  EXPECT_EQ(v, -2.0);
}

TEST(Checkpoint, TruncationReportsOffset) {
  std::map<std::string, Tensor> t;
  t.emplace("w", Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(path, t);
  const std::string full = read_bytes(path);
  write_bytes(path, full.substr(0, 30));
  const std::string msg = error_of([&] { read_checkpoint(path); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset 25"), std::string::npos) << msg;
  write_bytes(path, full.substr(0, 14));
  EXPECT_NE(error_of([&] { read_checkpoint(path); }).find("offset 12"), std::string::npos);
}

TEST(Checkpoint, BadMagicAndVersion) {
  const auto path = temp_path("magic.ckpt");
  write_bytes(path, std::string("NOTACKPT\1\0\0\0\0\0\0\0", 16));
  EXPECT_NE(error_of([&] { read_checkpoint(path); }).find("bad magic at offset 0"), std::string::npos);
  write_bytes(path, std::string("PYCATCK1\7\0\0\0\0\0\0\0", 16));
  const std::string msg = error_of([&] { read_checkpoint(path); });
  EXPECT_NE(msg.find("version 7"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset 8"), std::string::npos) << msg;
  write_bytes(path, std::string("PYCATCK1\1\0\0\0\0\0\0\0junk", 20));
  EXPECT_NE(error_of([&] { read_checkpoint(path); }).find("trailing"), std::string::npos);
  EXPECT_THROW(read_checkpoint(temp_path("absent.ckpt")), IoError);
}

TEST(Checkpoint, RefusesNonFiniteParameters) {
  std::map<std::string, Tensor> t;
  t.emplace("w", Tensor({2}, {1.0, std::nan("")}));
  EXPECT_THROW(save_checkpoint(temp_path("nan.ckpt"), t), ContractError);
}

TEST(Checkpoint, ModelParametersReload) {
  auto a = Model::create(tiny_model_config(Variant::pycat4), 1);
  auto b = Model::create(tiny_model_config(Variant::pycat4), 2);
  const auto path = temp_path("model.ckpt");
  save_checkpoint(path, a->store());
  load_checkpoint(path, b->store());
  for (const auto& [name, t] : a->store().named()) {
    const Tensor u = b->store().get(name);
    ASSERT_EQ(std::memcmp(t.values().data(), u.values().data(), t.numel() * sizeof(double)), 0) << name;
  }
}

TEST(Checkpoint, CrossVariantLoadListsAbsences) {
  const auto path = temp_path("cross.ckpt");
  auto base = Model::create(tiny_model_config(Variant::baseline), 1);
  save_checkpoint(path, base->store());
  for (Variant v : all_variants()) {
    if (v == Variant::baseline) continue;
    auto other = Model::create(tiny_model_config(v), 1);
    const std::string msg = error_of([&] { load_checkpoint(path, other->store()); });
    ASSERT_FALSE(msg.empty()) << variant_id(v);
    EXPECT_NE(msg.find("missing parameters:"), std::string::npos) << msg;
    if (uses_ca(v)) EXPECT_NE(msg.find("ca0."), std::string::npos) << variant_id(v);
    if (uses_temporal(v)) EXPECT_NE(msg.find("temporal."), std::string::npos);
  }
  auto reload = Model::create(tiny_model_config(Variant::baseline), 3);
  EXPECT_NO_THROW(load_checkpoint(path, reload->store()));
  ModelConfig wide = tiny_model_config(Variant::baseline);
  wide.fusion_channels = 16;
  auto mismatched = Model::create(wide, 1);
  EXPECT_NE(error_of([&] { load_checkpoint(path, mismatched->store()); }).find("shape mismatches"), std::string::npos);
}
