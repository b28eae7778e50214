#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "peft/errors.hpp"
#include "peft/serialize.hpp"
#include "test_util.hpp"

using namespace peft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "peft_forge_tests";
  fs::create_directories(dir);
  return dir / name;
}

void append_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  out << bytes;
}

}  // namespace

TEST(Serialize, WeightsRoundTrip) {
  const ModelConfig c = test::tiny_config();
  const BaseWeights w = init_random(c, 3);
  const fs::path p = scratch("w.bin");
  save_weights(p, w);
  const BaseWeights back = load_weights(p);
  EXPECT_EQ(back.config, c);
  EXPECT_TRUE(back.identical(w));
}

TEST(Serialize, AdapterRoundTripForEveryVariant) {
  const ModelConfig c = test::tiny_config();
  for (const char* spec : {"lora:r=2,alpha=3.5,targets=qv", "soft:K=3", "prefix:K=2,L=1", "llama_adapter:K=2,gate=head"}) {
    const Adapter a = Adapter::init(c, parse_adapter_spec(spec), 9);
    const fs::path p = scratch("a.bin");
    save_adapter(p, a);
    const Adapter b = load_adapter(p);
    EXPECT_EQ(to_string(b.spec()), spec);
    EXPECT_EQ(b.config(), c);
    ASSERT_EQ(b.trainable_parameters().size(), a.trainable_parameters().size());
    for (std::size_t i = 0; i < a.trainable_parameters().size(); ++i) {
      EXPECT_EQ(b.trainable_parameters()[i].name, a.trainable_parameters()[i].name);
      EXPECT_TRUE(test::bit_equal(b.trainable_parameters()[i].tensor, a.trainable_parameters()[i].tensor));
    }
  }
}

TEST(Serialize, SameContentSameBytes) {
  const ModelConfig c = test::tiny_config();
  const Adapter a = Adapter::init(c, parse_adapter_spec("prefix:K=2"), 1);
  save_adapter(scratch("h1.bin"), a);
  save_adapter(scratch("h2.bin"), a);
  EXPECT_EQ(file_hash(scratch("h1.bin")), file_hash(scratch("h2.bin")));
  EXPECT_EQ(file_hash(scratch("h1.bin")).size(), 16u);
}

TEST(Serialize, CorruptFilesRejected) {
  const ModelConfig c = test::tiny_config();
  const fs::path p = scratch("c.bin");
  save_weights(p, init_random(c, 1));
  EXPECT_THROW(load_adapter(p), DataError);
  append_bytes(p, "x");
  EXPECT_THROW(load_weights(p), DataError);

  save_weights(p, init_random(c, 1));
  fs::resize_file(p, fs::file_size(p) - 9);
  EXPECT_THROW(load_weights(p), DataError);

  std::ofstream(p, std::ios::binary) << "NOTPEFT0 garbage";
  EXPECT_THROW(load_weights(p), DataError);
  EXPECT_THROW(load_weights(scratch("missing.bin")), DataError);
}
