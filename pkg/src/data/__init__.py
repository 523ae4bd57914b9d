"""
CSV入出力・時刻整列・設定ファイル
"""
