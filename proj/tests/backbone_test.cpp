#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "freeevent/autoencoder.hpp"
#include "freeevent/errors.hpp"
#include "freeevent/toy_data.hpp"
#include "freeevent/train.hpp"
#include "freeevent/weights_io.hpp"
#include "support.hpp"

using namespace freeevent;

TEST(Text, ToyVocabulary) {
  const Vocabulary& v = toy_vocabulary();
  EXPECT_EQ(v.size(), 25);
  EXPECT_EQ(UNetConfig{}.vocab_size, v.size());
  EXPECT_EQ(v.id("<sot>"), kStartToken);
  EXPECT_EQ(v.tokenize("red disk and #11 bar"), (std::vector<int>{v.id("red"), v.id("disk"), v.id("and"), 11, v.id("bar")}));
  EXPECT_EQ(v.detokenize(v.tokenize("a photo of cyan ring")), "a photo of cyan ring");
  EXPECT_THROW(v.id("orange"), VocabularyError);
  EXPECT_THROW(v.tokenize("white disk"), VocabularyError);
}

TEST(Text, EmbeddingStartsWithStartToken) {
  const UNet net = fe_test::toy_net();
  const PromptEmbedding empty = embed_prompt({}, net.text_encoder());
  EXPECT_EQ(empty.n_tokens(), 1);
  const PromptEmbedding p = embed_prompt({9, 15}, net.text_encoder());
  EXPECT_EQ(p.token_ids, (std::vector<int>{0, 9, 15}));
  EXPECT_EQ(p.embeddings.shape(), (Shape{3, 32}));
  // position 0 is shared by every prompt
  for (int j = 0; j < 32; ++j) EXPECT_EQ(p.embeddings[static_cast<std::size_t>(j)], empty.embeddings[static_cast<std::size_t>(j)]);
  EXPECT_THROW(embed_prompt({25}, net.text_encoder()), VocabularyError);
}

TEST(Autoencoder, IdentityAndStrideTwo) {
  Image img(16, 16, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 7) / 6.0;
  const Autoencoder id{1, 3, 16, 16};
  const Image round = decode_latent(encode_image(img, id), id);
  ASSERT_EQ(round.data.size(), img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(round.data[i], img.data[i], 1e-15);
  const Autoencoder half{2, 3, 16, 16};
  const LatentTensor z = encode_image(img, half);
  EXPECT_EQ(z.shape(), (Shape{3, 8, 8}));
  const Image back = decode_latent(z, half);
  // decode(encode(x)) is a 2x2 block average of x
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) {
        const int by = y & ~1, bx = x & ~1;
        const double avg = (img.at(by, bx, c) + img.at(by, bx + 1, c) + img.at(by + 1, bx, c) + img.at(by + 1, bx + 1, c)) / 4;
        EXPECT_NEAR(back.at(y, x, c), avg, 1e-12);
      }
  EXPECT_THROW(encode_image(Image(15, 16, 3), half), ShapeError);
}

TEST(UNet, ShapesAndBatchConsistency) {
  const UNet net = fe_test::toy_net();
  const PromptEmbedding p = embed_prompt({9, 15}, net.text_encoder());
  const LatentTensor a = fe_test::random_tensor(1), b = fe_test::random_tensor(2);
  const LatentTensor ea = denoise_forward(net, a, 100, p).eps, eb = denoise_forward(net, b, 700, p).eps;
  EXPECT_EQ(ea.shape(), a.shape());

  Tensor both({2, 3, 8, 8});
  std::copy(a.storage().begin(), a.storage().end(), both.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), both.storage().begin() + 192);
  Tensor text({2, 3, 32});
  std::copy(p.embeddings.storage().begin(), p.embeddings.storage().end(), text.storage().begin());
  std::copy(p.embeddings.storage().begin(), p.embeddings.storage().end(), text.storage().begin() + 96);
  const ad::Var out = net.forward(ad::Var(both), {100, 700}, ad::Var(text), nullptr, nullptr, nullptr);
  for (std::size_t i = 0; i < 192; ++i) {
    EXPECT_NEAR(out.value()[i], ea[i], 1e-12);
    EXPECT_NEAR(out.value()[192 + i], eb[i], 1e-12);
  }
}

TEST(UNet, LayerAddressesAndValidation) {
  const UNet net = fe_test::toy_net();
  EXPECT_TRUE(net.has_layer(parse_layer_address("dec2:1")));
  EXPECT_EQ(to_string(parse_layer_address("decoder3:2")), "dec3:2");
  EXPECT_EQ(to_string(parse_layer_address("mid:0")), "mid0:0");
  EXPECT_THROW(net.layer(parse_layer_address("dec7:0")), AddressError);
  EXPECT_ANY_THROW(parse_layer_address("dec2"));
  EXPECT_EQ(parse_layer_group("dec2:[0,1,2]").size(), 3u);

  InterventionSet iv;
  iv.replace_sa[parse_layer_address("dec2:1")] = Tensor({2, 3, 3});
  EXPECT_THROW(net.validate(iv, 3), ShapeError);
  iv.replace_sa.clear();
  iv.record_at(parse_layer_address("dec0:0"), Quantity::sa);
  EXPECT_THROW(net.validate(iv, 3), AddressError);
}

TEST(UNet, CopiesAreIndependent) {
  UNet a = fe_test::toy_net(4);
  const Weights before = a.weights();
  UNet b = a;
  EXPECT_EQ(b.weights(), before);
  b.parameters().front().mutable_value()[0] += 1.0;
  EXPECT_EQ(a.weights(), before);
  EXPECT_NE(b.weights(), before);
  UNet c = fe_test::toy_net(5);
  c = a;
  a.parameters().back().mutable_value()[0] -= 2.0;
  EXPECT_EQ(c.weights(), before);
}

TEST(Weights, RoundTripIsExact) {
  fe_test::TempDir dir;
  const Weights w = initial_weights(UNetConfig{}, 31);
  EXPECT_EQ(quantized_f32(w), w);
  save_weights(dir / "w.bin", w);
  const Weights back = load_weights(dir / "w.bin");
  EXPECT_EQ(back, w);
  EXPECT_EQ(UNet::from_weights(back).weights(), w);
  EXPECT_EQ(file_digest(dir / "w.bin"), file_digest(dir / "w.bin"));
  EXPECT_THROW(load_weights(dir / "missing.bin"), IoError);
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTWEIGHTS";
  }
  EXPECT_ANY_THROW(load_weights(dir / "bad.bin"));
}

TEST(Weights, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64("", 0), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a", 1), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Train, ZeroStepsReturnsInitialization) {
  TrainOptions opt;
  opt.steps = 0;
  opt.seed = 8;
  opt.autoencoder = Autoencoder{2, 3, 16, 16};
  const ToyDataset data = make_shapes_dataset(8, 1);
  EXPECT_EQ(train_toy(data, opt).weights, initial_weights(opt.architecture, 8));
}

TEST(Train, DeterministicAndLearning) {
  TrainOptions opt;
  opt.steps = 120;
  opt.seed = 2;
  opt.warmup_steps = 10;
  opt.autoencoder = Autoencoder{2, 3, 16, 16};
  const ToyDataset data = make_shapes_dataset(64, 5);
  const TrainResult a = train_toy(data, opt);
  ASSERT_EQ(a.loss_history.size(), 120u);
  for (double l : a.loss_history) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(a.heldout_loss_final, a.heldout_loss_initial);
  const auto sm = smooth_losses(a.loss_history);
  EXPECT_LT(sm.back(), sm.front());

  opt.steps = 5;
  const TrainResult b = train_toy(data, opt), c = train_toy(data, opt);
  EXPECT_EQ(b.weights, c.weights);
  EXPECT_EQ(b.loss_history, c.loss_history);
}

TEST(Train, DatasetRoundTrip) {
  fe_test::TempDir dir;
  const ToyDataset data = make_shapes_dataset(12, 3);
  save_toy_dataset(dir.path(), data);
  const ToyDataset back = load_toy_dataset(dir.path());
  ASSERT_EQ(back.samples.size(), data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].token_ids, data.samples[i].token_ids);
    EXPECT_EQ(back.samples[i].image, data.samples[i].image);  // 8-bit palette colors survive PNG
  }
  EXPECT_THROW(load_toy_dataset(dir / "nowhere"), IoError);
}
