#include <cstdio>
int main(){ std::puts("demo"); return 0; }
