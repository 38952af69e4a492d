#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "lcm/ids.hpp"

using namespace lcm;

TEST_CASE("ids carry the kind tag and a 26-char body") {
    std::string id = generate_id(id_kind::message);
    REQUIRE(id.size() == 3 + 1 + 26);
    CHECK(id.substr(0, 4) == "msg_");
    const std::string alphabet = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
    for (char c : id.substr(4)) CHECK(alphabet.find(c) != std::string::npos);
}

TEST_CASE("id_kind_of extracts the tag") {
    CHECK(id_kind_of("sum_01ABC") == "sum");
    CHECK(id_kind_of("fil_X") == "fil");
    CHECK(id_kind_of("nounderscore") == "");
}

TEST_CASE("ids are unique and generated in sort order") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10000; ++i) ids.push_back(generate_id(id_kind::session));
    std::set<std::string> unique(ids.begin(), ids.end());
    CHECK(unique.size() == ids.size());
    CHECK(std::is_sorted(ids.begin(), ids.end()));
}
