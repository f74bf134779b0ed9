#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "finex/corpus.hpp"
#include "finex/synth.hpp"

using namespace finex;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = std::string("./") + name;
  std::ofstream out(path);
  out << content;
  return path;
}

// The running example sentence, pre-tokenized so span offsets line up.
const char* kPaperSentence =
    "Through application of ligand screening , we describe the first examples "
    "of Pd-catalyzed Suzuki\xE2\x80\x93Miyaura reactions using aryl sulfamates "
    "at room temperature .";

Corpus paper_example_corpus() {
  AnnotatedSentence s;
  s.id = "paper1";
  s.tokens = tokenize(kPaperSentence);
  s.mentions = {
      {3, 4, "ligand", "Ligands"},
      {12, 15, "Pd-catalyzed Suzuki\xE2\x80\x93Miyaura reactions", "Coupling reactions"},
      {16, 18, "aryl sulfamates", "Aromatic compounds"},
      {19, 21, "room temperature", "Thermodynamic properties"},
  };
  Corpus c;
  c.sentences.push_back(s);
  c.ontology = type_frequencies(c);
  validate_corpus(c);
  return c;
}

}  // namespace

TEST_CASE("minimal well-formed record loads", "[corpus]") {
  auto path = write_temp(
      "t_corpus_min.jsonl",
      R"({"id":"s1","text":"ligand binds fast","entities":[{"start":0,"end":1,"mention":"ligand","type":"Ligands"}]})"
      "\n");
  Corpus c = load_corpus(path);
  REQUIRE(c.sentences.size() == 1);
  REQUIRE(c.sentences[0].mentions.size() == 1);
  CHECK(c.sentences[0].mentions[0].surface == "ligand");
  CHECK(c.ontology.frequencies.at("Ligands") == 1);
  std::remove(path.c_str());
}

TEST_CASE("span out of range rejected", "[corpus]") {
  auto path = write_temp(
      "t_corpus_oob.jsonl",
      R"({"id":"s1","text":"a b c","entities":[{"start":0,"end":5,"mention":"a b c d e","type":"T"}]})"
      "\n");
  CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring("s1") &&
                                           Catch::Matchers::ContainsSubstring("span"));
  std::remove(path.c_str());
}

TEST_CASE("overlapping spans rejected", "[corpus]") {
  auto path = write_temp(
      "t_corpus_overlap.jsonl",
      R"({"id":"sx","text":"a b c","entities":[{"start":0,"end":2,"mention":"a b","type":"T"},{"start":1,"end":3,"mention":"b c","type":"T"}]})"
      "\n");
  CHECK_THROWS_WITH(load_corpus(path),
                    Catch::Matchers::ContainsSubstring("overlap"));
  std::remove(path.c_str());
}

TEST_CASE("surface mismatch rejected", "[corpus]") {
  auto path = write_temp(
      "t_corpus_mismatch.jsonl",
      R"({"id":"sm","text":"a b c","entities":[{"start":0,"end":1,"mention":"b","type":"T"}]})"
      "\n");
  CHECK_THROWS_WITH(load_corpus(path),
                    Catch::Matchers::ContainsSubstring("surface mismatch"));
  std::remove(path.c_str());
}

TEST_CASE("malformed JSON reports line number", "[corpus]") {
  auto path = write_temp("t_corpus_bad.jsonl",
                         "{\"id\":\"s1\",\"text\":\"a\",\"entities\":[]}\n"
                         "{not json\n");
  CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring("line 2"));
  std::remove(path.c_str());
}

TEST_CASE("paper example round-trips through save and load", "[corpus]") {
  Corpus c = paper_example_corpus();
  auto path = std::string("./t_corpus_paper.jsonl");
  save_corpus(c, path);
  Corpus back = load_corpus(path);
  REQUIRE(back == c);
  std::remove(path.c_str());
}

TEST_CASE("type_frequencies counts and orders", "[corpus]") {
  Corpus empty;
  CHECK(type_frequencies(empty).types.empty());

  Corpus c;
  for (int i = 0; i < 2; ++i) {
    AnnotatedSentence s;
    s.id = "s" + std::to_string(i);
    s.tokens = {"ligand", "binds"};
    s.mentions = {{0, 1, "ligand", "Ligands"}};
    c.sentences.push_back(s);
  }
  Ontology ont = type_frequencies(c);
  CHECK(ont.frequencies.at("Ligands") == 2);

  GeneratedCorpus gen = generate_synthetic(GeneratorSpec{}, 11);
  Ontology from_corpus = type_frequencies(gen.corpus);
  for (const auto& [t, n] : gen.tally) CHECK(from_corpus.frequencies.at(t) == n);
  long total = 0;
  for (const auto& [t, n] : from_corpus.frequencies) total += n;
  long mention_total = 0;
  for (const auto& s : gen.corpus.sentences)
    mention_total += static_cast<long>(s.mentions.size());
  CHECK(total == mention_total);
}

TEST_CASE("long_tail_types takes the lower half by rank", "[corpus]") {
  Ontology ont;
  ont.frequencies = {{"A", 5}, {"B", 5}, {"C", 1}, {"D", 9}};
  for (auto& [t, _] : ont.frequencies) ont.types.push_back(t);
  // ranking: D(9), A(5), B(5), C(1); lower floor(4/2)=2 -> {B, C}
  auto tail = long_tail_types(ont);
  CHECK(tail == std::set<std::string>{"B", "C"});

  Ontology empty;
  CHECK_THROWS_AS(long_tail_types(empty), ValidationError);
}

TEST_CASE("long_tail invariant under uniform frequency scaling", "[corpus]") {
  Rng rng(99);
  for (int it = 0; it < 50; ++it) {
    Ontology ont;
    int n = rng.range(1, 12);
    for (int i = 0; i < n; ++i) {
      std::string t = "T" + std::to_string(i);
      ont.frequencies[t] = rng.range(1, 40);
      ont.types.push_back(t);
    }
    auto tail = long_tail_types(ont);
    CHECK(tail.size() == ont.types.size() / 2);
    Ontology scaled = ont;
    for (auto& [t, f] : scaled.frequencies) f *= 7;
    CHECK(long_tail_types(scaled) == tail);
  }
}

TEST_CASE("generator is deterministic and feasible specs enforced", "[corpus]") {
  GeneratorSpec spec;
  spec.type_count = 10;
  spec.sentences = 200;
  GeneratedCorpus a = generate_synthetic(spec, 7);
  GeneratedCorpus b = generate_synthetic(spec, 7);
  auto pa = std::string("./t_syn_a.jsonl");
  auto pb = std::string("./t_syn_b.jsonl");
  save_corpus(a.corpus, pa);
  save_corpus(b.corpus, pb);
  std::ifstream fa(pa), fb(pb);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  std::remove(pa.c_str());
  std::remove(pb.c_str());

  GeneratorSpec bad;
  bad.type_count = 50;
  bad.sentences = 4;
  bad.mean_entities = 1.0;
  bad.max_entities_per_sentence = 2;
  CHECK_THROWS_AS(generate_synthetic(bad, 1), ValidationError);
}

TEST_CASE("generator exponent zero gives near-uniform counts", "[corpus]") {
  GeneratorSpec spec;
  spec.type_count = 5;
  spec.sentences = 500;
  spec.exponent = 0.0;
  GeneratedCorpus g = generate_synthetic(spec, 3);
  long mx = 0, mn = 1L << 40;
  for (const auto& [t, n] : g.tally) {
    mx = std::max(mx, n);
    mn = std::min(mn, n);
  }
  CHECK(static_cast<double>(mx) / mn <= 1.5);
}

TEST_CASE("generator hits the requested mean entity rate", "[corpus]") {
  GeneratorSpec spec;
  spec.type_count = 8;
  spec.sentences = 500;
  spec.mean_entities = 3.1;
  GeneratedCorpus g = generate_synthetic(spec, 5);
  long total = 0;
  for (const auto& s : g.corpus.sentences) total += static_cast<long>(s.mentions.size());
  double mean = static_cast<double>(total) / spec.sentences;
  CHECK(mean >= 2.8);
  CHECK(mean <= 3.4);
}

TEST_CASE("generated corpora validate and round-trip", "[corpus]") {
  GeneratorSpec spec;
  spec.type_count = 12;
  spec.sentences = 120;
  GeneratedCorpus g = generate_synthetic(spec, 21);
  validate_corpus(g.corpus);
  auto path = std::string("./t_syn_rt.jsonl");
  save_corpus(g.corpus, path);
  Corpus back = load_corpus(path);
  CHECK(back == g.corpus);
  std::remove(path.c_str());
}
