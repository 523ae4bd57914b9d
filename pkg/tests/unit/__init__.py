"""列車オドメトリ推定のユニットテスト"""
