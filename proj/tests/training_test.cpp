#include <catch2/catch_amalgamated.hpp>

TEST_CASE("placeholder training_test") { SUCCEED(); }
