package util;

public class Broken {
    public int half(int value {
        return value / 2;
}
