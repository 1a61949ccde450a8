"""
HiNeRV Codec

階層的エンコーディングを用いたニューラル表現 (INR) による動画コーデック。
動画ごとにネットワークを学習することがエンコード、ビットストリームからの
重み復元と順伝播がデコードに相当します。
"""

__version__ = "1.0.0"
