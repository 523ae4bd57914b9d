"""
EKFによる列車オドメトリ推定モジュール
"""
