"""
センサ合意分析 (Sensor Consensus Analysis) モジュール
"""
