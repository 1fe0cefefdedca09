#pragma once

// Synthetic Peyma-tagged corpora. Every entity class draws from its own
// small lexicon and filler words never appear inside entities, so the tags
// are a deterministic function of the words. Sentences drawn with different
// seeds come from the same distribution.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "seqtag/corpus.hpp"
#include "seqtag/rng.hpp"

namespace fixture {

struct Pattern {
  const char* cls;
  std::vector<const char*> heads;
  std::vector<const char*> tails;  // empty: single-token entity
};

inline const std::vector<Pattern>& patterns() {
  static const std::vector<Pattern> p = {
      {"PER", {"علی", "مریم", "حسین", "زهرا", "رضا", "سارا"}, {"احمدی", "کریمی", "رضایی", "موسوی"}},
      {"LOC", {"تهران", "شیراز", "اصفهان", "تبریز", "مشهد"}, {}},
      {"ORG", {"شرکت", "بانک", "دانشگاه"}, {"ملت", "صنعتی", "پارس", "سپه"}},
      {"DAT", {"۱۲", "۲۵", "۳", "۱۸"}, {"فروردین", "مهر", "دی", "آذر"}},
      {"MON", {"۵۰۰", "۲۰۰۰", "۷۵۰"}, {"ریال", "تومان"}},
      {"PCT", {"۱۰", "۴۰", "۶۵"}, {"درصد"}},
      {"TIM", {"ساعت"}, {"۸", "۱۰", "۱۶", "۲۲"}},
  };
  return p;
}

inline const std::vector<const char*>& fillers() {
  static const std::vector<const char*> f = {
      "در", "به", "از", "که", "این", "با", "را", "است", "گفت", "روز", "امروز", "شد",
      "خبر", "گزارش", "مردم", "کار", "سال", "نیز", "برای", "بود", "هم", "دیروز", "جلسه", "رفت"};
  return f;
}

// n sentences of 4-12 tokens with 0-3 entities each.
inline seqtag::Corpus synthetic_corpus(std::size_t n, std::uint64_t seed) {
  const seqtag::Tagset ts = seqtag::Tagset::peyma();
  seqtag::Rng rng(seed);
  seqtag::Corpus corpus{ts, {}, "synthetic"};
  const auto& pats = patterns();
  const auto& fill = fillers();
  for (std::size_t s = 0; s < n; ++s) {
    seqtag::TaggedSentence sent;
    const std::size_t entities = rng.below(4);
    auto add_filler = [&](std::size_t count) {
      for (std::size_t i = 0; i < count; ++i) {
        sent.tokens.emplace_back(fill[rng.below(fill.size())]);
        sent.tags.push_back(seqtag::Tagset::outside());
      }
    };
    add_filler(1 + rng.below(3));
    for (std::size_t e = 0; e < entities; ++e) {
      const Pattern& p = pats[rng.below(pats.size())];
      const std::size_t cls = *ts.find_class(p.cls);
      sent.tokens.emplace_back(p.heads[rng.below(p.heads.size())]);
      sent.tags.push_back(seqtag::Tagset::begin_of(cls));
      if (!p.tails.empty()) {
        sent.tokens.emplace_back(p.tails[rng.below(p.tails.size())]);
        sent.tags.push_back(seqtag::Tagset::inside_of(cls));
      }
      add_filler(1 + rng.below(2));
    }
    sent.line = 0;
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

// Filler-only sentences: no entity cue anywhere.
inline std::vector<std::vector<std::string>> filler_sentences(std::size_t n, std::uint64_t seed) {
  seqtag::Rng rng(seed);
  std::vector<std::vector<std::string>> out(n);
  for (auto& s : out)
    for (std::size_t i = 0, len = 3 + rng.below(6); i < len; ++i) s.emplace_back(fillers()[rng.below(fillers().size())]);
  return out;
}

}  // namespace fixture
