#include <CLI11.hpp>
#include <cstdio>

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal manipulation trajectory optimizer"};
    app.require_subcommand(0, 1);
    CLI11_PARSE(app, argc, argv);
    std::puts("subcommands are not wired up yet");
    return 0;
}
