#include "complaints/tokenizers.hpp"

#include <gtest/gtest.h>

#include <set>

namespace complaints {
namespace {

using Words = std::vector<std::string>;

TEST(WordPiece, NormalizesAccentsCaseAndControls) {
  EXPECT_EQ(WordPieceTokenizer::normalize("Café\tNAÏVE\x01!"), "cafe naive!");
  EXPECT_EQ(WordPieceTokenizer::normalize("你好"), " 你  好 ");
}

TEST(WordPiece, SplitsPunctuationIntoSingleTokens) {
  EXPECT_EQ(WordPieceTokenizer::pre_tokenize("don't stop... now"),
            (Words{"don", "'", "t", "stop", ".", ".", ".", "now"}));
  EXPECT_EQ(WordPieceTokenizer::pre_tokenize("a\xE2\x80\x94" "b"), (Words{"a", "\xE2\x80\x94", "b"}));
}

TEST(WordPiece, GreedyLongestMatchWithContinuationPrefix) {
  WordPieceTokenizer tok({{"[PAD]", 0}, {"[UNK]", 1}, {"[CLS]", 2}, {"[SEP]", 3},
                          {"un", 4}, {"##aff", 5}, {"##able", 6}, {"unaff", 7}, {"a", 8}});
  EXPECT_EQ(tok.tokenize("unaffable"), (std::vector<int>{7, 6}));
  EXPECT_EQ(tok.tokenize("unxyz a"), (std::vector<int>{1, 8}));
  EXPECT_EQ(tok.encode("a a a", 4).ids, (std::vector<int>{2, 8, 8, 3}));
}

TEST(ByteBpe, ByteTableIsABijectionOntoPrintableCodePoints) {
  auto table = ByteBpeTokenizer::byte_table();
  std::set<char32_t> seen(table.begin(), table.end());
  EXPECT_EQ(seen.size(), 256u);
  EXPECT_EQ(table[' '], U'Ġ');
  EXPECT_EQ(table['a'], U'a');
}

TEST(ByteBpe, PreTokenizerFollowsTheGpt2Pattern) {
  EXPECT_EQ(ByteBpeTokenizer::pre_tokenize("I've got 42 cats!!"),
            (Words{"I", "'ve", " got", " 42", " cats", "!!"}));
  EXPECT_EQ(ByteBpeTokenizer::pre_tokenize("a   b  "), (Words{"a", "  ", " b", "  "}));
  EXPECT_EQ(ByteBpeTokenizer::pre_tokenize("x\ny"), (Words{"x", "\n", "y"}));
}

TEST(ByteBpe, AppliesMergesByRank) {
  std::unordered_map<std::string, int> vocab = {{"<s>", 0}, {"<pad>", 1}, {"</s>", 2}, {"a", 3},
                                                {"b", 4},   {"ab", 5},    {"abb", 6}};
  ByteBpeTokenizer tok(vocab, {{"a", "b"}, {"ab", "b"}});
  EXPECT_EQ(tok.tokenize("abb"), (std::vector<int>{6}));
  EXPECT_EQ(tok.tokenize("ba"), (std::vector<int>{4, 3}));
}

TEST(Unigram, ViterbiPrefersHigherScoringSegmentation) {
  std::vector<std::pair<std::string, double>> pieces = {
      {"<pad>", 0}, {"<unk>", 0}, {"[CLS]", 0}, {"[SEP]", 0},
      {"\xE2\x96\x81" "ab", -1.0}, {"\xE2\x96\x81", -2.0}, {"a", -2.0}, {"b", -2.0}, {"c", -9.0}};
  UnigramTokenizer tok(pieces, 1, true, UnigramTokenizer::Layout::albert);
  EXPECT_EQ(tok.tokenize("AB"), (std::vector<int>{4}));
  EXPECT_EQ(tok.tokenize("ba"), (std::vector<int>{5, 7, 6}));
  // unknown characters fuse into one id
  EXPECT_EQ(tok.tokenize("xyz"), (std::vector<int>{5, 1}));
}

TEST(Unigram, NormalizerRewritesQuotesAndCollapsesSpaces) {
  std::vector<std::pair<std::string, double>> pieces = {{"<pad>", 0}, {"<unk>", 0}, {"<sep>", 0}, {"<cls>", 0}};
  UnigramTokenizer tok(pieces, 1, false, UnigramTokenizer::Layout::xlnet);
  EXPECT_EQ(tok.normalize("``Déjà''   vu"), "\"Deja\" vu");
  EXPECT_EQ(UnigramTokenizer::pre_tokenize("a b"), (Words{"\xE2\x96\x81" "a", "\xE2\x96\x81" "b"}));
  auto seq = tok.encode("", 10);
  EXPECT_EQ(seq.ids, (std::vector<int>{2, 3}));
  EXPECT_EQ(seq.type_ids, (std::vector<int>{0, 2}));
}

TEST(HashTokenizer, UsesPlaceholdersAndStableBuckets) {
  HashTokenizer tok(100);
  auto a = tok.tokenize("see https://x.co/a now");
  auto b = tok.tokenize("see http://other.org now");
  EXPECT_EQ(a, b);
  for (int id : a) {
    EXPECT_GE(id, HashTokenizer::kFirstBucket);
    EXPECT_LT(id, 100);
  }
}

TEST(Tokenizer, WrapRejectsLengthsWithoutRoomForContent) {
  HashTokenizer tok(100);
  EXPECT_THROW(tok.encode("x", 2), UsageError);
  EXPECT_EQ(tok.encode("x y z", 3).size(), 3u);
}

}  // namespace
}  // namespace complaints
