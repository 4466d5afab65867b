#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <string>
#include <thread>

#include <httplib.h>

#include "atomflex/fetch.hpp"
#include "support/test_util.hpp"

using namespace atomflex;

namespace {

const std::string kBody =
    "HEADER    FIXTURE\n"
    "ATOM      1  N   MET A   1      27.340  24.430   2.614  1.00 30.00           N\n"
    "END\n";

/// Local stand-in for the archive's file service.
struct LoopbackArchive {
    httplib::Server server;
    std::thread runner;
    int port = 0;
    std::atomic<int> hits{0};
    std::atomic<int> flaky_failures_left{2};

    LoopbackArchive() {
        server.Get(R"(/files/(\w+)\.pdb)", [this](const httplib::Request& req,
                                                  httplib::Response& res) {
            ++hits;
            const std::string code = req.matches[1];
            if (code == "9MIS") {
                res.status = 404;
                return;
            }
            if (code == "9FLK" && flaky_failures_left-- > 0) {
                res.status = 503;
                return;
            }
            if (code == "9BAD") {
                res.status = 500;
                return;
            }
            res.set_content("CODE " + code + "\n" + kBody, "text/plain");
        });
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        runner = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LoopbackArchive() {
        server.stop();
        runner.join();
    }

    FetchOptions options() const {
        FetchOptions o;
        o.base_url = "http://127.0.0.1:" + std::to_string(port) + "/files";
        o.backoff_initial_ms = 5;
        return o;
    }
};

}  // namespace

TEST_CASE("structure codes are one digit plus three alphanumerics") {
    REQUIRE(valid_structure_code("1GA0"));
    REQUIRE(valid_structure_code("5y9l"));
    REQUIRE(valid_structure_code("9abZ"));
    REQUIRE_FALSE(valid_structure_code("ZGA0"));   // must start with a digit
    REQUIRE_FALSE(valid_structure_code("1GA"));    // too short
    REQUIRE_FALSE(valid_structure_code("1GA00"));  // too long
    REQUIRE_FALSE(valid_structure_code("1G_0"));
    REQUIRE_FALSE(valid_structure_code(""));
}

TEST_CASE("malformed codes never reach the network") {
    testutil::TempDir dir;
    FetchOptions opts;
    opts.base_url = "http://127.0.0.1:1/files";  // nothing listens here
    // a transport error would mean a connection was attempted
    REQUIRE_THROWS_AS(fetch_structure("TOOLONG", dir.path(), opts), ContractError);
    REQUIRE_THROWS_AS(fetch_structure("ZZZZ", dir.path(), opts), ContractError);
}

TEST_CASE("a cold fetch downloads, caches atomically, and returns the body") {
    LoopbackArchive archive;
    testutil::TempDir dir;
    const std::string body = fetch_structure("1GA0", dir.path(), archive.options());
    REQUIRE(body.rfind("CODE 1GA0\n", 0) == 0);
    REQUIRE(archive.hits == 1);

    const auto entry = dir.path() / "1GA0.pdb";
    REQUIRE(std::filesystem::exists(entry));
    std::ifstream in(entry, std::ios::binary);
    std::stringstream cached;
    cached << in.rdbuf();
    REQUIRE(cached.str() == body);

    // no temporary droppings beside the entry
    std::size_t files = 0;
    for (const auto& p : std::filesystem::directory_iterator(dir.path())) {
        (void)p;
        ++files;
    }
    REQUIRE(files == 1);
}

TEST_CASE("a warm cache is a read-through with no network call") {
    LoopbackArchive archive;
    testutil::TempDir dir;
    const std::string first = fetch_structure("2XYZ", dir.path(), archive.options());
    REQUIRE(archive.hits == 1);
    const std::string second = fetch_structure("2XYZ", dir.path(), archive.options());
    REQUIRE(second == first);
    REQUIRE(archive.hits == 1);

    // codes are case-insensitive: the lowercase spelling hits the same entry
    const std::string third = fetch_structure("2xyz", dir.path(), archive.options());
    REQUIRE(third == first);
    REQUIRE(archive.hits == 1);
}

TEST_CASE("a missing entry is a not-found error naming the code") {
    LoopbackArchive archive;
    testutil::TempDir dir;
    REQUIRE_THROWS_WITH(fetch_structure("9MIS", dir.path(), archive.options()),
                        Catch::Matchers::ContainsSubstring("9MIS"));
    REQUIRE_THROWS_AS(fetch_structure("9MIS", dir.path(), archive.options()), NotFoundError);
    // not-found is immediate, never retried
    REQUIRE(archive.hits == 2);
    REQUIRE_FALSE(std::filesystem::exists(dir.path() / "9MIS.pdb"));
}

TEST_CASE("transient server failures are retried with backoff") {
    LoopbackArchive archive;
    testutil::TempDir dir;
    const std::string body = fetch_structure("9FLK", dir.path(), archive.options());
    REQUIRE(body.rfind("CODE 9FLK\n", 0) == 0);
    REQUIRE(archive.hits == 3);  // two 503s, then success
}

TEST_CASE("persistent failure exhausts the attempt budget") {
    LoopbackArchive archive;
    testutil::TempDir dir;
    try {
        fetch_structure("9BAD", dir.path(), archive.options());
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        const std::string what = e.what();
        REQUIRE(what.find("9BAD") != std::string::npos);
        REQUIRE(what.find("3 attempts") != std::string::npos);
    }
    REQUIRE(archive.hits == 3);
    REQUIRE_FALSE(std::filesystem::exists(dir.path() / "9BAD.pdb"));
}

TEST_CASE("an unreachable host is a transport error") {
    testutil::TempDir dir;
    FetchOptions opts;
    opts.base_url = "http://127.0.0.1:1/files";
    opts.backoff_initial_ms = 1;
    opts.timeout_seconds = 1;
    REQUIRE_THROWS_AS(fetch_structure("1AAA", dir.path(), opts), TransportError);
}
