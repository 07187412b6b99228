#include <catch2/catch_amalgamated.hpp>

#include "act/eval.hpp"
#include "support/oracles.hpp"

using act::Box;
using act::Detection;
using act::LabeledBox;
using act::Tube;

TEST_CASE("pixel IoU", "[eval]") {
    REQUIRE(act::iou({3, 4, 10, 12}, {3, 4, 10, 12}) == 1.0);
    REQUIRE(act::iou({0, 0, 5, 5}, {5, 5, 10, 10}) == 0.0);
    REQUIRE(act::iou({0, 0, 10, 10}, {5, 0, 15, 10}) == Catch::Approx(1.0 / 3.0));

    act::Rng rng(600);
    for (int trial = 0; trial < 50; ++trial) {
        Box a, b;
        for (Box* box : {&a, &b}) {
            box->x1 = static_cast<int>(rng.uniform_index(20));
            box->y1 = static_cast<int>(rng.uniform_index(20));
            box->x2 = box->x1 + 1 + static_cast<int>(rng.uniform_index(15));
            box->y2 = box->y1 + 1 + static_cast<int>(rng.uniform_index(15));
        }
        REQUIRE(act::iou(a, b) == Catch::Approx(oracle::pixel_count_iou(a, b)).margin(1e-12));
    }
}

TEST_CASE("precision-recall curve and average precision", "[eval]") {
    SECTION("all positives ranked first gives AP 1") {
        const auto c = act::pr_curve({0.9, 0.8, 0.3, 0.2}, {true, true, false, false});
        REQUIRE(c.positive_count == 2);
        REQUIRE(act::average_precision(c) == Catch::Approx(1.0));
    }
    SECTION("the (0.9, 0.8, 0.7) / (pos, neg, pos) hand case equals 5/6 exactly") {
        const auto c = act::pr_curve({0.9, 0.8, 0.7}, {true, false, true});
        REQUIRE(act::average_precision(c) == Catch::Approx(5.0 / 6.0).margin(1e-15));
    }
    SECTION("reversing scores on one positive and one negative halves AP") {
        REQUIRE(act::average_precision(act::pr_curve({0.9, 0.1}, {true, false})) == 1.0);
        REQUIRE(act::average_precision(act::pr_curve({0.1, 0.9}, {true, false})) == 0.5);
    }
    SECTION("recall is non-decreasing along the curve") {
        act::Rng rng(601);
        std::vector<double> scores;
        std::vector<bool> labels;
        for (int i = 0; i < 40; ++i) {
            scores.push_back(rng.uniform());
            labels.push_back(rng.uniform() < 0.4);
        }
        if (std::none_of(labels.begin(), labels.end(), [](bool b) { return b; }))
            labels[0] = true;
        const auto c = act::pr_curve(scores, labels);
        for (std::size_t i = 1; i < c.points.size(); ++i)
            REQUIRE(c.points[i].first >= c.points[i - 1].first);
    }
    SECTION("AP depends only on the ranking") {
        act::Rng rng(602);
        std::vector<double> scores;
        std::vector<bool> labels;
        for (int i = 0; i < 30; ++i) {
            scores.push_back(rng.uniform());
            labels.push_back(rng.uniform() < 0.5);
        }
        labels[0] = true;
        const double base = act::average_precision(act::pr_curve(scores, labels));
        std::vector<double> cubed;
        for (double s : scores) cubed.push_back(s * s * s);
        REQUIRE(act::average_precision(act::pr_curve(cubed, labels)) == Catch::Approx(base));
        std::vector<double> affine;
        for (double s : scores) affine.push_back(2.0 * s + 5.0);
        REQUIRE(act::average_precision(act::pr_curve(affine, labels)) == Catch::Approx(base));
    }
    SECTION("AP matches the direct enumeration oracle on random instances") {
        act::Rng rng(603);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<double> scores;
            std::vector<bool> labels;
            std::vector<std::pair<double, bool>> items;
            int positives = 0;
            for (int i = 0; i < 25; ++i) {
                const double s = rng.uniform();
                const bool l = rng.uniform() < 0.3;
                scores.push_back(s);
                labels.push_back(l);
                items.emplace_back(s, l);
                positives += l;
            }
            if (positives == 0) {
                labels[0] = true;
                items[0].second = true;
                positives = 1;
            }
            REQUIRE(act::average_precision(act::pr_curve(scores, labels)) ==
                    Catch::Approx(oracle::direct_ap(items, positives)).margin(1e-12));
        }
    }
    SECTION("zero positives is an error") {
        REQUIRE_THROWS_AS(act::pr_curve({0.5, 0.4}, {false, false}), std::invalid_argument);
    }
}

TEST_CASE("grid actionness AP on images", "[eval]") {
    SECTION("a map equal to the gt mask ranks perfectly under coverage") {
        const std::vector<Box> gt = {{12, 20, 43, 55}};
        const act::ActionnessMap mask = act::boxes_to_binary_map(gt, 64, 64);
        REQUIRE(act::grid_actionness_ap(mask, gt) == Catch::Approx(1.0));
    }
    SECTION("constant maps score the stable-order AP, confirmed directly") {
        const std::vector<Box> gt = {{0, 0, 64, 16}}; // top quarter of the image
        const act::ActionnessMap flat(64, 64, 0.5f);
        // Build the same cell labels independently and feed the direct AP oracle.
        std::vector<std::pair<double, bool>> items;
        int positives = 0;
        for (int cy = 0; cy < 16; ++cy)
            for (int cx = 0; cx < 16; ++cx) {
                const bool pos = cy < 4; // cells fully inside the gt stripe
                items.emplace_back(0.5, pos);
                positives += pos;
            }
        const double got = act::grid_actionness_ap(flat, gt);
        REQUIRE(got == Catch::Approx(oracle::direct_ap(items, positives)).margin(1e-12));
        // Full-image gt: every cell positive, any constant map ranks perfectly.
        REQUIRE(act::grid_actionness_ap(flat, {{0, 0, 64, 64}}) == Catch::Approx(1.0));
    }
    SECTION("literal IoU criterion is available but nearly unsatisfiable for small cells") {
        act::GridProtocolConfig cfg;
        cfg.criterion = act::GridProtocolConfig::Criterion::LiteralIoU;
        const std::vector<Box> gt = {{0, 0, 4, 4}}; // exactly one 4x4 cell of a 64x64 map
        const act::ActionnessMap mask = act::boxes_to_binary_map(gt, 64, 64);
        REQUIRE(act::grid_actionness_ap(mask, gt, cfg) == Catch::Approx(1.0));
        REQUIRE_THROWS_AS(act::grid_actionness_ap(mask, {}, cfg), std::invalid_argument);
    }
    SECTION("maps smaller than the grid are rejected") {
        REQUIRE_THROWS_AS(act::grid_actionness_ap(act::ActionnessMap(8, 8), {{0, 0, 4, 4}}),
                          std::invalid_argument);
    }
}

TEST_CASE("grid actionness AP on videos", "[eval]") {
    SECTION("8 frames split into 4 cuboid bins of 2 frames") {
        // gt covers a block only during the first two frames; a matching map
        // sequence ranks the bin-0 cuboids perfectly.
        const std::vector<Box> gt_box = {{0, 0, 16, 16}};
        std::vector<act::ActionnessMap> maps;
        std::vector<std::vector<Box>> gt;
        for (int t = 0; t < 8; ++t) {
            if (t < 2) {
                maps.push_back(act::boxes_to_binary_map(gt_box, 64, 64));
                gt.push_back(gt_box);
            } else {
                maps.push_back(act::ActionnessMap(64, 64, 0.0f));
                gt.push_back({});
            }
        }
        REQUIRE(act::grid_actionness_ap(maps, gt) == Catch::Approx(1.0));
    }
    SECTION("frame counts not divisible by the bins put the remainder last") {
        // 10 frames, 4 bins: the last bin spans frames 6..9. gt lives only
        // there; a map lighting up frames 6..9 ranks perfectly, while one
        // lighting up frames 0..3 ranks the worst cuboids first.
        const std::vector<Box> gt_box = {{0, 0, 16, 16}};
        std::vector<std::vector<Box>> gt(10);
        for (int t = 6; t < 10; ++t) gt[t] = gt_box;
        std::vector<act::ActionnessMap> aligned, misaligned;
        for (int t = 0; t < 10; ++t) {
            aligned.push_back(t >= 6 ? act::boxes_to_binary_map(gt_box, 64, 64)
                                     : act::ActionnessMap(64, 64, 0.0f));
            misaligned.push_back(t < 4 ? act::boxes_to_binary_map(gt_box, 64, 64)
                                       : act::ActionnessMap(64, 64, 0.0f));
        }
        REQUIRE(act::grid_actionness_ap(aligned, gt) == Catch::Approx(1.0));
        REQUIRE(act::grid_actionness_ap(misaligned, gt) < 0.5);
    }
}

TEST_CASE("proposal recall", "[eval]") {
    const std::vector<std::vector<Box>> gt = {{{0, 0, 10, 10}}, {{20, 20, 40, 40}}};
    SECTION("proposals equal to every gt give recall 1 at any threshold") {
        const std::vector<std::vector<Box>> props = {{{0, 0, 10, 10}}, {{20, 20, 40, 40}}};
        REQUIRE(act::proposal_recall(props, gt, 0.5) == 1.0);
        REQUIRE(act::proposal_recall(props, gt, 1.0) == 1.0);
    }
    SECTION("no proposals, no recall") {
        const std::vector<std::vector<Box>> props = {{}, {}};
        REQUIRE(act::proposal_recall(props, gt, 0.5) == 0.0);
    }
    SECTION("an IoU 0.6 cover counts at threshold 0.5 but not 0.7") {
        // (0,0,10,10) vs (0,0,10,6): inter 60, union 100 -> IoU 0.6
        const std::vector<std::vector<Box>> props = {{{0, 0, 10, 6}}, {}};
        REQUIRE(act::iou(props[0][0], gt[0][0]) == Catch::Approx(0.6));
        REQUIRE(act::proposal_recall(props, gt, 0.5) == 0.5);
        REQUIRE(act::proposal_recall(props, gt, 0.7) == 0.0);
        REQUIRE(act::proposal_recall(props, gt, 0.6) == 0.5); // >= comparison
    }
    SECTION("curves are monotone in the expected directions") {
        act::Rng rng(604);
        std::vector<std::vector<Box>> props(2);
        for (auto& list : props)
            for (int i = 0; i < 10; ++i) {
                Box b;
                b.x1 = static_cast<int>(rng.uniform_index(30));
                b.y1 = static_cast<int>(rng.uniform_index(30));
                b.x2 = b.x1 + 5 + static_cast<int>(rng.uniform_index(20));
                b.y2 = b.y1 + 5 + static_cast<int>(rng.uniform_index(20));
                list.push_back(b);
            }
        const auto by_count = act::recall_vs_count(props, gt, 0.3, 10);
        for (std::size_t i = 1; i < by_count.size(); ++i)
            REQUIRE(by_count[i].second >= by_count[i - 1].second);
        const auto by_iou = act::recall_vs_iou(props, gt, 10, {0.1, 0.3, 0.5, 0.7, 0.9});
        for (std::size_t i = 1; i < by_iou.size(); ++i)
            REQUIRE(by_iou[i].second <= by_iou[i - 1].second);
    }
    SECTION("an empty ground-truth set is an error") {
        const std::vector<std::vector<Box>> props = {{}};
        const std::vector<std::vector<Box>> empty_gt = {{}};
        REQUIRE_THROWS_AS(act::proposal_recall(props, empty_gt, 0.5), std::invalid_argument);
    }
}

TEST_CASE("frame-level average precision", "[eval]") {
    SECTION("one exact detection with the right label scores 1") {
        const std::vector<Detection> dets = {{0, {5, 5, 25, 25}, 1, 0.9f}};
        const std::vector<LabeledBox> gt = {{0, {5, 5, 25, 25}, 1}};
        const auto ap = act::frame_ap(dets, gt);
        REQUIRE(ap.size() == 1);
        REQUIRE(ap.at(1) == Catch::Approx(1.0));
    }
    SECTION("a wrong label scores 0 for both classes involved") {
        const std::vector<LabeledBox> gt = {{0, {5, 5, 25, 25}, 0}, {1, {5, 5, 25, 25}, 1}};
        const std::vector<Detection> dets = {{0, {5, 5, 25, 25}, 1, 0.9f}};
        const auto ap = act::frame_ap(dets, gt);
        REQUIRE(ap.at(0) == 0.0);
        REQUIRE(ap.at(1) == 0.0);
    }
    SECTION("duplicates become false positives after the first match") {
        const std::vector<LabeledBox> gt = {{0, {5, 5, 25, 25}, 0}};
        const std::vector<Detection> dets = {{0, {5, 5, 25, 25}, 0, 0.9f},
                                             {0, {5, 5, 25, 25}, 0, 0.8f}};
        const auto ap = act::frame_ap(dets, gt);
        REQUIRE(ap.at(0) == Catch::Approx(1.0));
    }
    SECTION("one ground truth never matches two detections") {
        const std::vector<LabeledBox> gt = {{0, {0, 0, 20, 20}, 0}, {0, {40, 40, 60, 60}, 0}};
        const std::vector<Detection> dets = {{0, {0, 0, 20, 20}, 0, 0.9f},
                                             {0, {1, 0, 21, 20}, 0, 0.8f},
                                             {0, {2, 0, 22, 20}, 0, 0.7f}};
        // Only the first detection can match the first gt; the second gt is
        // never found, so recall tops out at 0.5.
        const auto ap = act::frame_ap(dets, gt);
        REQUIRE(ap.at(0) == Catch::Approx(0.5));
    }
    SECTION("matching is strictly greater than the threshold") {
        // IoU exactly 0.5: (0,0,10,10) vs (0,0,10,5) has IoU 0.5
        const std::vector<LabeledBox> gt = {{0, {0, 0, 10, 10}, 0}};
        const std::vector<Detection> dets = {{0, {0, 0, 10, 5}, 0, 0.9f}};
        REQUIRE(act::iou(dets[0].box, gt[0].box) == Catch::Approx(0.5));
        REQUIRE(act::frame_ap(dets, gt).at(0) == 0.0);
    }
    SECTION("classes without ground truth are skipped") {
        const std::vector<LabeledBox> gt = {{0, {0, 0, 10, 10}, 2}};
        const std::vector<Detection> dets = {{0, {0, 0, 10, 10}, 0, 0.9f},
                                             {0, {0, 0, 10, 10}, 2, 0.9f}};
        const auto ap = act::frame_ap(dets, gt);
        REQUIRE(ap.size() == 1);
        REQUIRE(ap.count(2) == 1);
        REQUIRE(act::mean_ap(ap) == Catch::Approx(1.0));
    }
}

namespace {

Tube make_tube(int cls, int start, std::vector<Box> boxes, double score) {
    Tube t;
    t.class_label = cls;
    t.start_frame = start;
    t.boxes = std::move(boxes);
    t.tube_score = score;
    return t;
}

} // namespace

TEST_CASE("tube overlap and video AP", "[eval]") {
    SECTION("identical tubes overlap 1 and score AP 1") {
        const Tube gt = make_tube(0, 0, {{0, 0, 10, 10}, {2, 0, 12, 10}, {4, 0, 14, 10}}, 1.0);
        REQUIRE(act::tube_overlap(gt, gt) == Catch::Approx(1.0));
        REQUIRE(act::video_ap({gt}, {gt}).at(0) == Catch::Approx(1.0));
    }
    SECTION("per-frame IoUs (1.0, 0.6, 0.2) average 0.6 and match at 0.5") {
        const Tube gt = make_tube(0, 0, {{0, 0, 100, 10}, {0, 0, 100, 10}, {0, 0, 10, 10}}, 1.0);
        const Tube pred =
            make_tube(0, 0, {{0, 0, 100, 10}, {25, 0, 125, 10}, {0, 0, 10, 2}}, 0.9);
        REQUIRE(act::tube_overlap(pred, gt) == Catch::Approx(0.6));
        REQUIRE(act::video_ap({pred}, {gt}).at(0) == Catch::Approx(1.0));
    }
    SECTION("a mean overlap of exactly 0.5 stays unmatched") {
        const Tube gt = make_tube(0, 0, {{0, 0, 10, 10}, {0, 0, 10, 10}}, 1.0);
        const Tube pred = make_tube(0, 0, {{0, 0, 10, 10}, {50, 50, 60, 60}}, 0.9);
        REQUIRE(act::tube_overlap(pred, gt) == Catch::Approx(0.5));
        REQUIRE(act::video_ap({pred}, {gt}).at(0) == 0.0);
    }
    SECTION("frames covered by only one tube contribute zero overlap") {
        const Tube gt = make_tube(0, 0,
                                  {{0, 0, 10, 10},
                                   {0, 0, 10, 10},
                                   {0, 0, 10, 10},
                                   {0, 0, 10, 10}},
                                  1.0);
        const Tube pred = make_tube(0, 2, {{0, 0, 10, 10}, {0, 0, 10, 10}}, 0.9);
        REQUIRE(act::tube_overlap(pred, gt) == Catch::Approx(0.5));
    }
}
