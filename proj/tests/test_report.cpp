#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "prlm/metrics.hpp"
#include "prlm/report.hpp"

using namespace prlm;

TEST_CASE("report rows render aligned text with two decimals") {
  const std::vector<report::ReportRow> rows{
      {"BGE", 30.212, 13.449, 24.911, 34.031},
      {"random", 28.0, 11.5, 22.25, 30.0},
  };
  const std::string table = report::to_text_table(rows);
  CHECK(table ==
        "method & rouge-1 & rouge-2 & rouge-l & bleu\n"
        "BGE & 30.21 & 13.45 & 24.91 & 34.03\n"
        "random & 28.00 & 11.50 & 22.25 & 30.00\n");
}

TEST_CASE("empty report is just the header") {
  CHECK(report::to_text_table({}) == "method & rouge-1 & rouge-2 & rouge-l & bleu\n");
  CHECK(report::to_csv({}) == "method,rouge1,rouge2,rougeL,bleu\n");
  CHECK(report::to_json({}) == nlohmann::json::array());
}

TEST_CASE("csv rendering uses the same rounding as the text table") {
  const std::vector<report::ReportRow> rows{{"bm25", 1.0 / 3.0, 0.0, 99.999, 100.0}};
  CHECK(report::to_csv(rows) ==
        "method,rouge1,rouge2,rougeL,bleu\n"
        "bm25,0.33,0.00,100.00,100.00\n");
}

TEST_CASE("json rendering keeps full precision") {
  const std::vector<report::ReportRow> rows{{"dense", 0.123456789, 1.0, 2.0, 3.0}};
  const auto doc = report::to_json(rows);
  REQUIRE(doc.is_array());
  REQUIRE(doc.size() == 1);
  CHECK(doc[0]["method"] == "dense");
  CHECK(doc[0]["rouge1"].get<double>() == 0.123456789);
  CHECK(doc[0]["rouge2"].get<double>() == 1.0);
  CHECK(doc[0]["rougeL"].get<double>() == 2.0);
  CHECK(doc[0]["bleu"].get<double>() == 3.0);
}

TEST_CASE("rows are built from corpus metrics in metric order") {
  metrics::CorpusReport cr;
  cr.rouge1 = 41.5;
  cr.rouge2 = 20.25;
  cr.rougeL = 38.0;
  cr.bleu = 17.75;
  const auto row = report::row_from("recency", cr);
  CHECK(row == report::ReportRow{"recency", 41.5, 20.25, 38.0, 17.75});
}
