#include <doctest.h>

#include <fstream>

#include "rpsm/config.hpp"
#include "support.hpp"

using namespace rpsm;

TEST_SUITE("config") {

TEST_CASE("assignments and overrides") {
  CHECK(parse_assignment("lr=0.01") == std::pair<std::string, std::string>{"lr", "0.01"});
  CHECK(parse_assignment("alphas = 1,2,3").second == "1,2,3");
  CHECK_THROWS(parse_assignment("lr"));
  CHECK_THROWS(parse_assignment("=3"));

  RunConfig c;
  c.set("stages", "2");
  c.set("alphas", "1,0.5");
  c.set("augment", "false");
  c.set("preset", "full");
  CHECK(c.model.stages == 2);
  CHECK(c.train.alphas == std::vector<double>{1, 0.5});
  CHECK_FALSE(c.train.augment);
  CHECK(c.model.preset == ScalePreset::full);
  CHECK_THROWS_AS(c.set("learning_rate", "1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("stages", "two"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("augment", "maybe"), std::invalid_argument);
  CHECK(std::find(RunConfig::keys().begin(), RunConfig::keys().end(), "clip_length") != RunConfig::keys().end());
}

TEST_CASE("config files") {
  test::TempDir dir("cfg");
  {
    std::ofstream f(dir / "run.cfg");
    f << "# desk run\nstages = 1\n\nepochs=3   # short\n";
  }
  RunConfig c;
  c.merge_file(dir / "run.cfg");
  CHECK(c.model.stages == 1);
  CHECK(c.train.epochs == 3);
  {
    std::ofstream f(dir / "bad.cfg");
    f << "stages = 1\nbogus = 2\n";
  }
  try {
    c.merge_file(dir / "bad.cfg");
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS(c.merge_file(dir / "missing.cfg"));
}

TEST_CASE("model differences name the keys") {
  ModelConfig a, b;
  CHECK(model_config_differences(a, b).empty());
  b.stages = 1;
  b.clip_length = 4;
  CHECK(model_config_differences(a, b) == std::vector<std::string>{"stages", "clip_length"});
}

}  // TEST_SUITE
