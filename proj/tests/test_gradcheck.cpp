#include "toib/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace toib;

TEST(GradCheckSuite, AllOpsWithinTolerance) {
    const GradCheckReport rep = gradcheck_ops();
    for (const auto& r : rep.rows) EXPECT_TRUE(r.pass) << r.name << " max rel " << r.max_rel;
}

TEST(GradCheckSuite, FullPipelineWithinTolerance) {
    const GradCheckRow row = gradcheck_pipeline();
    EXPECT_TRUE(row.pass) << "pipeline max rel " << row.max_rel;
    EXPECT_LT(row.max_rel, 1e-4);
}
