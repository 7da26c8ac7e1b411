#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "advx/checkpoint.hpp"
#include "advx/errors.hpp"

using namespace advx;
using ad::RealArray;

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(3);
  const model::MultVaeParams p = model::init_multvae({12, 5, 3, ad::Activation::kTanh}, rng);
  const adv::AdvHeadParams head = adv::init_head(3, 4, adv::AttributeSpec::continuous("age"), rng);
  ckpt::Checkpoint c;
  c.config["model.latent"] = "3";
  c.config["note"] = "spaces are fine";
  ckpt::put_model(c, p);
  ckpt::put_head(c, "adversary.age", head);
  c.put("odd", RealArray::vector({0.1, -0.0, std::numeric_limits<double>::denorm_min(), 1e300, -1.0 / 3.0}));

  const auto path = std::filesystem::temp_directory_path() / "advx_ckpt_roundtrip.ckpt";
  ckpt::save(path, c);
  const ckpt::Checkpoint back = ckpt::load(path);
  std::filesystem::remove(path);

  EXPECT_EQ(back.config, c.config);
  const model::MultVaeParams q = ckpt::get_model(back);
  EXPECT_EQ(model::checksum(p), model::checksum(q));
  EXPECT_TRUE(model::bit_equal(p.encoder, q.encoder));
  EXPECT_TRUE(model::bit_equal(p.decoder, q.decoder));
  const adv::AdvHeadParams h = ckpt::get_head(back, "adversary.age");
  EXPECT_TRUE(ad::bit_equal(h.output.weights, head.output.weights));
  EXPECT_TRUE(ad::bit_equal(back.get("odd"), c.get("odd")));
  EXPECT_TRUE(std::signbit(back.get("odd")[1]));
}

TEST(Checkpoint, SerializationIsStable) {
  ckpt::Checkpoint c;
  c.put("w", RealArray::matrix({{1.5, 2.0}}));
  EXPECT_EQ(ckpt::serialize(ckpt::deserialize(ckpt::serialize(c))), ckpt::serialize(c));
}

TEST(Checkpoint, MissingArrayAndCorruption) {
  ckpt::Checkpoint c;
  c.put("w", RealArray::matrix({{1.5, 2.0}}));
  EXPECT_FALSE(c.has("v"));
  EXPECT_THROW(c.get("v"), DataError);
  std::string text = ckpt::serialize(c);
  EXPECT_THROW(ckpt::deserialize("garbage\n"), DataError);
  EXPECT_THROW(ckpt::deserialize(text.substr(0, text.size() / 2)), DataError);
  EXPECT_THROW(ckpt::load("/nonexistent/advx.ckpt"), DataError);
}
