#include "flatner/lattice.hpp"

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "flatner/common.hpp"

using flatner::build_lattice;
using flatner::Cell;
using flatner::FlatLattice;
using flatner::Modality;
using flatner::ObjectAnnotation;
using flatner::ObjectKind;
using flatner::validation_error;

namespace {

ObjectAnnotation whole(int id) { return {id, ObjectKind::WHOLE_IMAGE, 0, 0}; }
ObjectAnnotation phrase(int id, int first, int last) {
  return {id, ObjectKind::NOUN_PHRASE, first, last};
}
ObjectAnnotation general(int id) { return {id, ObjectKind::GENERAL_WORD, 0, 0}; }

void expect_cell(const Cell& c, Modality mod, int head, int tail) {
  EXPECT_EQ(c.modality, mod);
  EXPECT_EQ(c.head, head);
  EXPECT_EQ(c.tail, tail);
}

}  // namespace

TEST(Lattice, FiveWordsWithWholeImageAndPhrase) {
  auto lat = build_lattice({10, 11, 12, 13, 14}, {whole(3), phrase(7, 4, 5)});
  ASSERT_EQ(lat.size(), 9u);
  EXPECT_EQ(lat.n, 5u);
  EXPECT_EQ(lat.m, 2u);
  expect_cell(lat.cells[0], Modality::SPECIAL, 0, 0);
  for (int i = 1; i <= 5; ++i) {
    expect_cell(lat.cells[i], Modality::WORD, i, i);
    EXPECT_EQ(lat.cells[i].content, 9 + i);
  }
  expect_cell(lat.cells[6], Modality::SPECIAL, 6, 6);
  expect_cell(lat.cells[7], Modality::VISUAL, 1, 5);
  EXPECT_EQ(lat.cells[7].content, 3);
  expect_cell(lat.cells[8], Modality::VISUAL, 4, 5);
  EXPECT_EQ(lat.cells[8].content, 7);
}

TEST(Lattice, SingleWordNoObjects) {
  auto lat = build_lattice({42}, {});
  ASSERT_EQ(lat.size(), 3u);
  expect_cell(lat.cells[0], Modality::SPECIAL, 0, 0);
  expect_cell(lat.cells[1], Modality::WORD, 1, 1);
  expect_cell(lat.cells[2], Modality::SPECIAL, 2, 2);
}

TEST(Lattice, FourGeneralWordObjects) {
  auto lat = build_lattice({1, 2, 3}, {general(0), general(1), general(2), general(3)});
  ASSERT_EQ(lat.size(), 9u);
  for (std::size_t i = 5; i < 9; ++i) expect_cell(lat.cells[i], Modality::VISUAL, 1, 3);
}

TEST(Lattice, EmptySentenceRejected) {
  EXPECT_THROW(build_lattice({}, {}), validation_error);
}

TEST(Lattice, BadSpansRejected) {
  EXPECT_THROW(build_lattice({1, 2, 3}, {phrase(0, 0, 2)}), validation_error);
  EXPECT_THROW(build_lattice({1, 2, 3}, {phrase(0, 1, 4)}), validation_error);
  EXPECT_THROW(build_lattice({1, 2, 3}, {phrase(0, 3, 2)}), validation_error);
  try {
    build_lattice({1, 2, 3}, {phrase(0, 2, 7)});
    FAIL() << "expected rejection";
  } catch (const validation_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
}

TEST(Lattice, ModalitySelectors) {
  auto sel = flatner::modality_mask(build_lattice({1, 2}, {whole(0)}));
  EXPECT_EQ(sel.word, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(sel.special, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(sel.visual, (std::vector<std::size_t>{4}));

  auto no_vis = flatner::modality_mask(build_lattice({1, 2, 3}, {}));
  EXPECT_TRUE(no_vis.visual.empty());

  auto lat = build_lattice({1, 2, 3, 4, 5}, {whole(0), phrase(1, 2, 3)});
  auto sel2 = flatner::modality_mask(lat);
  EXPECT_EQ(sel2.word.size(), 5u);
  EXPECT_EQ(sel2.special.size(), 2u);
  EXPECT_EQ(sel2.visual.size(), 2u);
  EXPECT_EQ(sel2.word.size() + sel2.special.size() + sel2.visual.size(), lat.size());
}

TEST(Lattice, RowsRoundTrip) {
  auto lat = build_lattice({5, 6, 7, 8}, {whole(1), phrase(2, 1, 2), general(3)});
  auto rows = flatner::lattice_rows(lat);
  auto rebuilt = flatner::lattice_from_rows(rows);
  ASSERT_EQ(rebuilt.size(), lat.size());
  EXPECT_EQ(rebuilt.n, lat.n);
  EXPECT_EQ(rebuilt.m, lat.m);
  for (std::size_t i = 0; i < lat.size(); ++i) {
    EXPECT_EQ(rebuilt.cells[i].content, lat.cells[i].content);
    EXPECT_EQ(rebuilt.cells[i].modality, lat.cells[i].modality);
    EXPECT_EQ(rebuilt.cells[i].head, lat.cells[i].head);
    EXPECT_EQ(rebuilt.cells[i].tail, lat.cells[i].tail);
  }
}

TEST(Lattice, MalformedRowsRejected) {
  auto rows = flatner::lattice_rows(build_lattice({5, 6}, {}));
  rows[1][2] = 9;  // word cell head must equal its position
  EXPECT_THROW(flatner::lattice_from_rows(rows), validation_error);
}

TEST(Lattice, RenderShowsCells) {
  auto lat = build_lattice({5, 6}, {whole(1)});
  const std::string table = flatner::render_lattice(lat, [](const Cell& c) {
    return c.modality == Modality::VISUAL ? "obj" : "tok";
  });
  EXPECT_NE(table.find("head"), std::string::npos);
  EXPECT_NE(table.find("visual"), std::string::npos);
  EXPECT_NE(table.find("word"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
}

TEST(Lattice, ObjectKindNamesRoundTrip) {
  for (auto k : {ObjectKind::WHOLE_IMAGE, ObjectKind::NOUN_PHRASE, ObjectKind::GENERAL_WORD})
    EXPECT_EQ(flatner::object_kind_from_name(flatner::object_kind_name(k)), k);
  EXPECT_THROW(flatner::object_kind_from_name("bogus"), validation_error);
}
