#include <cstdio>

int main() {
    std::puts("motadual: subcommands not wired up yet");
    return 1;
}
