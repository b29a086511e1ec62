#include "complaints/text.hpp"

#include <gtest/gtest.h>

#include <random>

namespace complaints {
namespace {

using Tokens = std::vector<std::string>;

TEST(BasicTokenize, LowercasesAndDropsPunctuation) {
  EXPECT_EQ(basic_tokenize("No luck with pc or phone."),
            (Tokens{"no", "luck", "with", "pc", "or", "phone"}));
}

TEST(BasicTokenize, KeepsPlaceholders) {
  EXPECT_EQ(basic_tokenize("see <url>"), (Tokens{"see", "<url>"}));
  EXPECT_EQ(basic_tokenize("thanks <user>!"), (Tokens{"thanks", "<user>"}));
  EXPECT_EQ(basic_tokenize("like this <url>."), (Tokens{"like", "this", "<url>"}));
}

TEST(BasicTokenize, MasksUrlsAndMentions) {
  EXPECT_EQ(basic_tokenize("@Delta where is my bag https://t.co/xyz"),
            (Tokens{"<user>", "where", "is", "my", "bag", "<url>"}));
  EXPECT_EQ(basic_tokenize("www.example.com rocks"), (Tokens{"<url>", "rocks"}));
  // A lone '@' is punctuation, not a mention.
  EXPECT_EQ(basic_tokenize("meet @ noon"), (Tokens{"meet", "noon"}));
}

TEST(BasicTokenize, SplitsOnUnicodePunctuationAndKeepsLetters) {
  EXPECT_EQ(basic_tokenize("caf\xC3\xA9\xE2\x80\xA6great"),
            (Tokens{"caf\xC3\xA9", "great"}));
}

TEST(BasicTokenize, EmptyAndWhitespaceOnly) {
  EXPECT_TRUE(basic_tokenize("").empty());
  EXPECT_TRUE(basic_tokenize(" \t\n ").empty());
  EXPECT_TRUE(basic_tokenize("?!...").empty());
}

TEST(BasicTokenize, DeterministicOverRandomInput) {
  std::mt19937 rng(50);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> len(0, 140);
  for (int i = 0; i < 50; ++i) {
    std::string tweet;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) tweet.push_back(static_cast<char>(byte(rng)));
    EXPECT_EQ(basic_tokenize(tweet), basic_tokenize(tweet));
    for (const auto& tok : basic_tokenize(tweet)) EXPECT_FALSE(tok.empty());
  }
}

}  // namespace
}  // namespace complaints
