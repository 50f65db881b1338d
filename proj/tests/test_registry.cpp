#include "mtlforge/error.hpp"
#include "mtlforge/registry.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace mtlforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("mtlforge-test-" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

TaskSpec spec(const std::string& name, FamilyId f) {
    TaskSpec s;
    s.name = name;
    s.family = f;
    s.format = default_template(f);
    return s;
}

} // namespace

TEST_CASE("family names round-trip") {
    for (auto f : kAllFamilies) {
        CHECK(parse_family(to_string(f)) == f);
        CHECK(parse_family(display_name(f)) == f);
    }
    CHECK(parse_family("rc+") == FamilyId::RC_PLUS);
    CHECK_THROWS_AS(parse_family("XYZ"), Error);
}

TEST_CASE("standard catalog has three tasks in each of six families") {
    const auto reg = synthetic_registry(1, 4);
    CHECK(reg.tasks().size() == 18);
    std::set<std::string> seen;
    for (auto f : kAllFamilies) {
        const auto tasks = reg.tasks_in(f);
        CHECK(tasks.size() == 3);
        for (const auto* t : tasks) {
            CHECK(t->family == f);
            CHECK(seen.insert(t->name).second); // pairwise disjoint
        }
    }
    CHECK(seen.size() == reg.tasks().size()); // union is everything
}

TEST_CASE("registration") {
    Registry reg;
    reg.register_task(spec("squad", FamilyId::RC));
    CHECK(reg.task("squad").family == FamilyId::RC);
    CHECK_THROWS_WITH_AS(reg.register_task(spec("squad", FamilyId::CLS)), doctest::Contains("squad"), Error);
    CHECK_THROWS_AS(reg.task("nope"), Error);
    TaskSpec bad = spec("bad", FamilyId::CLS);
    bad.format.inputs[0].label = "Text";
    CHECK_THROWS_AS(reg.register_task(bad), Error);
}

TEST_CASE("load_dataset") {
    const auto dir = temp_dir("load");
    auto s = spec("imdb", FamilyId::CLS);

    SUBCASE("three well-formed lines") {
        write(dir / "ok.jsonl", R"({"id":"1","text":"a","label":"pos"}
{"id":"2","text":"b","label":"neg"}

{"id":"3","text":"c","label":"pos"}
)");
        const auto ex = load_dataset(dir / "ok.jsonl", s);
        CHECK(ex.size() == 3);
        CHECK(s.size == 3);
        CHECK(ex[1].fields.at("text") == "b");
    }
    SUBCASE("empty file") {
        write(dir / "empty.jsonl", "");
        CHECK(load_dataset(dir / "empty.jsonl", s).empty());
        CHECK(s.size == 0);
    }
    SUBCASE("missing target on line 2") {
        write(dir / "bad.jsonl", "{\"id\":\"1\",\"text\":\"a\",\"label\":\"x\"}\n{\"id\":\"2\",\"text\":\"b\"}\n");
        CHECK_THROWS_WITH_AS(load_dataset(dir / "bad.jsonl", s), doctest::Contains("line 2, missing label"), Error);
    }
    SUBCASE("malformed json names the line") {
        write(dir / "junk.jsonl", "{\"id\":\"1\",\"text\":\"a\",\"label\":\"x\"}\nnot json\n");
        CHECK_THROWS_WITH_AS(load_dataset(dir / "junk.jsonl", s), doctest::Contains("line 2"), Error);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(dir / "none.jsonl", s), Error); }
}

TEST_CASE("format_example") {
    Example ex{"1", {{"question", "Q"}, {"context", "C"}}};
    FormatTemplate tpl{{{"question:", "question"}, {"context:", "context"}}, "question"};
    CHECK(format_example(ex, tpl).input_text == "question: Q context: C");

    Example doc{"2", {{"document", "some text"}, {"summary", "s"}}};
    const auto p = format_example(doc, default_template(FamilyId::SUM), "xsum");
    CHECK(p.input_text == "document: some text");
    CHECK(p.target_text == "s");
    CHECK(p.task_name == "xsum");

    Example missing{"3", {{"question", "Q"}}};
    CHECK_THROWS_AS(format_example(missing, tpl), Error);
}

TEST_CASE("formatting round-trips field values") {
    for (auto f : kAllFamilies) {
        const auto tpl = default_template(f);
        for (const auto& ex : synth_fixture(f, 20, 3)) {
            const auto text = format_example(ex, tpl).input_text;
            // Split on the labels in template order.
            std::size_t pos = 0;
            for (std::size_t k = 0; k < tpl.inputs.size(); ++k) {
                const auto& label = tpl.inputs[k].label;
                REQUIRE(text.compare(pos, label.size(), label) == 0);
                pos += label.size() + 1;
                std::size_t end = text.size();
                if (k + 1 < tpl.inputs.size()) end = text.find(" " + tpl.inputs[k + 1].label, pos);
                CHECK(text.substr(pos, end - pos) == ex.fields.at(tpl.inputs[k].field_key));
                pos = end + 1;
            }
        }
    }
}

TEST_CASE("truncation") {
    std::string long_input;
    for (int i = 0; i < 600; ++i) long_input += (i ? " w" : "w") + std::to_string(i);
    TextPair p{long_input, "short target", "t"};
    const auto t = truncate_pair(p, kPrefinetuneLimits);
    const auto toks = whitespace_tokenize(t.input_text);
    CHECK(toks.size() == 512);
    CHECK(t.input_text.substr(toks.back().begin) == "w511");
    CHECK(t.target_text == "short target");

    TextPair small{"a b c", "x", "t"};
    CHECK(truncate_pair(small, {2, 5}).input_text == "a b");
    CHECK(truncate_pair(small, {5, 5}) == small);
    CHECK_THROWS_AS(truncate_pair(small, {0, 5}), Error);

    // Idempotence.
    const auto twice = truncate_pair(t, kPrefinetuneLimits);
    CHECK(twice == t);
    TextPair spaced{"  a   b  c d  ", "x  y  z", "t"};
    const auto once = truncate_pair(spaced, {3, 2});
    CHECK(once.input_text == "a   b  c");
    CHECK(once.target_text == "x  y");
    CHECK(truncate_pair(once, {3, 2}) == once);
}

TEST_CASE("synthetic fixtures") {
    CHECK(synth_fixture(FamilyId::SUM, 5, 42) == synth_fixture(FamilyId::SUM, 5, 42));
    CHECK(synth_fixture(FamilyId::SUM, 0, 42).empty());
    const auto rc = synth_fixture(FamilyId::RC, 100, 7);
    CHECK(rc.size() == 100);
    const auto keys = default_template(FamilyId::RC).required_keys();
    for (const auto& ex : rc) {
        for (const auto& k : keys) CHECK(ex.fields.count(k) == 1);
        CHECK(ex.fields.at("context").find(ex.fields.at("answer")) != std::string::npos);
    }
    for (const auto& ex : synth_fixture(FamilyId::SUM, 30, 1))
        CHECK(ex.fields.at("document").rfind(ex.fields.at("summary"), 0) == 0);
}

TEST_CASE("registry digest and manifest round-trip") {
    const auto dir = temp_dir("manifest");
    const auto reg = synthetic_registry(3, 5);
    CHECK(reg.digest() == synthetic_registry(3, 5).digest());
    CHECK(reg.digest() != synthetic_registry(4, 5).digest());

    Registry located;
    for (auto s : reg.tasks()) {
        s.source_path = s.name + ".jsonl";
        write_dataset(dir / s.source_path, reg.examples(s.name));
        located.register_task(s);
    }
    write_registry_manifest(dir / "registry.json", located);
    const auto loaded = load_registry_manifest(dir / "registry.json");
    CHECK(loaded.digest() == reg.digest());
    CHECK(loaded.examples("squad") == reg.examples("squad"));

    fs::remove(dir / "squad.jsonl");
    CHECK_THROWS_WITH_AS(load_registry_manifest(dir / "registry.json"), doctest::Contains("squad"), Error);

    write(dir / "extra.json", R"({"tasks":[],"bogus":1})");
    CHECK_THROWS_AS(load_registry_manifest(dir / "extra.json"), Error);
}
