#include <doctest.h>

#include <fstream>
#include <sstream>

#include "amplifier/baselines.hpp"
#include "amplifier/checkpoint.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace amp;

namespace {

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string checkpoint_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  ScratchDir dir("ckpt-roundtrip");
  Rng rng(1);
  std::vector<std::unique_ptr<Forecaster>> models;
  models.push_back(std::make_unique<AmplifierModel>(AmplifierConfig::defaults(3, 12, 6), rng));
  models.push_back(std::make_unique<LinearForecaster>(LinearShape{3, 12, 6}, rng));
  models.push_back(std::make_unique<DLinearForecaster>(LinearShape{3, 12, 6}, 5, rng));
  models.push_back(std::make_unique<EatWrapper>(std::make_unique<DLinearForecaster>(LinearShape{3, 12, 6}, 3, rng), rng));
  const Tensor x = oracle::random_tensor({4, 3, 12}, rng);
  for (auto& m : models) {
    const auto path = dir / (m->kind() + ".bin");
    save_checkpoint(*m, {0.25, 7}, path);
    const LoadedCheckpoint loaded = load_checkpoint(path);
    INFO(m->kind());
    CHECK(loaded.model->forward(x).to_vector() == m->forward(x).to_vector());
    CHECK(loaded.config == m->config());
    CHECK(loaded.meta.best_val == 0.25);
    CHECK(loaded.meta.epoch == 7);
  }
}

TEST_CASE("manifest offsets are contiguous and cover the payload") {
  ScratchDir dir("ckpt-manifest");
  Rng rng(2);
  AmplifierModel model(AmplifierConfig::defaults(2, 8, 4), rng);
  save_checkpoint(model, {}, dir / "m.bin");
  const LoadedCheckpoint loaded = load_checkpoint(dir / "m.bin");
  const auto params = model.parameters();
  REQUIRE(loaded.manifest.size() == params.size());
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded.manifest[i].name == params[i]->name);
    CHECK(loaded.manifest[i].shape == params[i]->value.shape());
    CHECK(loaded.manifest[i].offset == cursor);
    CHECK(loaded.manifest[i].bytes == 8 * params[i]->value.numel());
    cursor += loaded.manifest[i].bytes;
  }
  CHECK(cursor == loaded.payload_bytes);
  CHECK(loaded.payload_bytes == 8 * model.parameter_count());
}

TEST_CASE("damaged checkpoints are rejected") {
  ScratchDir dir("ckpt-damaged");
  Rng rng(3);
  LinearForecaster model({2, 8, 4}, rng);
  const auto good = dir / "good.bin";
  save_checkpoint(model, {1.5, 2}, good);
  const std::string bytes = read_all(good);

  write_all(dir / "short.bin", bytes.substr(0, bytes.size() - 5));
  CHECK(!checkpoint_error(dir / "short.bin").empty());

  write_all(dir / "long.bin", bytes + "xx");
  CHECK(!checkpoint_error(dir / "long.bin").empty());

  std::string version = bytes;
  version.replace(version.find("format_version=1"), 16, "format_version=9");
  write_all(dir / "version.bin", version);
  CHECK(checkpoint_error(dir / "version.bin").find("version") != std::string::npos);

  // Config says 5 lookback steps while the manifest holds 8.
  std::string shape = bytes;
  shape.replace(shape.find("config.lookback=8"), 17, "config.lookback=5");
  write_all(dir / "shape.bin", shape);
  CHECK(!checkpoint_error(dir / "shape.bin").empty());

  std::string renamed = bytes;
  renamed.replace(renamed.find("param linear.bias"), 17, "param linear.bogs");
  write_all(dir / "renamed.bin", renamed);
  CHECK(!checkpoint_error(dir / "renamed.bin").empty());

  write_all(dir / "empty.bin", "");
  CHECK(!checkpoint_error(dir / "empty.bin").empty());
  CHECK(!checkpoint_error(dir / "absent.bin").empty());
}
